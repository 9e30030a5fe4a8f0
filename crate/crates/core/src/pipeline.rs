//! Build, initialize, solve and evaluate in one call.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{pair_consistency, reprojection_stats, PairConsistency, ReprojMode, ReprojectionReport};
use crate::factors::Weights;
use crate::geometry::Isometry3;
use crate::graph::{build_multi_with, build_single_with, GraphOptions, GraphProblem, ProblemSummary};
use crate::init::{initialize, InitStrategy, InitUsed};
use crate::model::{CameraId, Dataset};
use crate::solver::{solve, SolveReport, SolverConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationOptions {
    pub graph: GraphOptions,
    pub init: InitStrategy,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEstimate {
    pub camera_id: CameraId,
    pub world_to_cam: Isometry3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub summary: ProblemSummary,
    pub weights: Weights,
    pub init: InitUsed,
    pub cameras: Vec<CameraEstimate>,
    pub hand_to_board: Isometry3,
    pub report: SolveReport,
}

impl Calibration {
    pub fn world_to_cam(&self, camera: CameraId) -> Option<&Isometry3> {
        self.cameras
            .iter()
            .find(|c| c.camera_id == camera)
            .map(|c| &c.world_to_cam)
    }
}

fn run(problem: GraphProblem, d: &Dataset, opts: &CalibrationOptions) -> Result<Calibration> {
    let init = initialize(&problem, d, opts.init)?;
    let report = solve(&problem, &init.state, &opts.solver)?;
    let cameras = problem
        .cameras()
        .into_iter()
        .filter_map(|c| {
            report.state.world_to_cam(c).map(|w| CameraEstimate {
                camera_id: c,
                world_to_cam: *w,
            })
        })
        .collect();
    Ok(Calibration {
        summary: problem.summary(),
        weights: problem.weights,
        init: init.used,
        cameras,
        hand_to_board: *report.state.hand_to_board().expect("every problem has HandToBoard"),
        report,
    })
}

pub fn calibrate_single(d: &Dataset, camera: CameraId, opts: &CalibrationOptions) -> Result<Calibration> {
    run(build_single_with(d, camera, &opts.graph)?, d, opts)
}

pub fn calibrate_multi(d: &Dataset, opts: &CalibrationOptions) -> Result<Calibration> {
    run(build_multi_with(d, &opts.graph)?, d, opts)
}

/// Everything `calibrate` writes to its result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub calibration: Calibration,
    pub reprojection: ReprojectionReport,
    pub consistency: Vec<PairConsistency>,
}

pub fn evaluate(d: &Dataset, calibration: Calibration, mode: ReprojMode) -> CalibrationResult {
    let reprojection = reprojection_stats(d, &calibration.report.state, mode);
    let consistency = pair_consistency(&calibration.report.state);
    CalibrationResult {
        calibration,
        reprojection,
        consistency,
    }
}
