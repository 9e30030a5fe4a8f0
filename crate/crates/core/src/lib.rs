//! Eye-on-base hand-eye calibration for one or many static cameras, solved
//! as a pose graph with Levenberg-Marquardt.
//!
//! The usual entry points are [`pipeline::calibrate_multi`] and
//! [`pipeline::calibrate_single`]; [`synth`] generates synthetic work cells
//! for testing and noise studies.

// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod factors;
pub mod geometry;
pub mod graph;
pub mod init;
pub mod model;
pub mod pipeline;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Isometry3, Pixel, Twist6};
pub use graph::{GraphProblem, GraphState, VariableId};
pub use model::{BoardModel, CameraId, Dataset, Detection};
