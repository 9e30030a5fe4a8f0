//! Calibration quality: pose errors against ground truth and per-camera
//! reprojection statistics.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{project, Isometry3};
use crate::graph::{GraphState, VariableId};
use crate::model::{CameraId, Dataset};

/// Per-camera RMS above which a state is reported as not converged.
pub const PLAUSIBLE_RMS_PX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Meters.
    pub trans_err: f64,
    /// Geodesic angle, radians in `[0, pi]`.
    pub rot_err: f64,
}

pub fn pose_error(estimate: &Isometry3, truth: &Isometry3) -> PoseError {
    PoseError {
        trans_err: (estimate.translation - truth.translation).norm(),
        rot_err: truth.rotation.angle_to(&estimate.rotation),
    }
}

/// Where the board pose of each detection comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprojMode {
    /// The CamToBoard variable of the detection.
    Direct,
    /// `inv(W_T_C) * W_T_H_i * H_T_B` from the camera pose, the recorded
    /// robot pose and the hand-board transform.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraReprojStats {
    pub camera_id: CameraId,
    pub rms: f64,
    pub mean: f64,
    pub max: f64,
    /// Corners included in the statistics.
    pub corners: usize,
    /// Corners excluded because they fall behind the camera.
    pub behind_camera: usize,
    pub plausible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub rms: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub mode: ReprojMode,
    pub cameras: Vec<CameraReprojStats>,
    /// Arithmetic mean of the per-camera values.
    pub average: AverageRow,
    pub converged: bool,
}

fn board_pose(
    d: &Dataset,
    state: &GraphState,
    mode: ReprojMode,
    camera: CameraId,
    timestep: usize,
) -> Option<Isometry3> {
    match mode {
        ReprojMode::Direct => state.get(&VariableId::CamToBoard { camera, timestep }).copied(),
        ReprojMode::Chain => Some(
            state
                .world_to_cam(camera)?
                .inverse()
                .compose(d.robot_poses.get(timestep)?)
                .compose(state.hand_to_board()?),
        ),
    }
}

/// Statistics for every camera whose detections can be posed from `state`.
/// Cameras without the needed variables are skipped.
pub fn reprojection_stats(d: &Dataset, state: &GraphState, mode: ReprojMode) -> ReprojectionReport {
    let points: Vec<Vector3<f64>> = d.board.corners();
    let mut cameras = Vec::new();
    for camera in d.camera_ids() {
        let Some(k) = d.intrinsics(camera) else { continue };
        let mut errs = Vec::new();
        let mut behind = 0;
        let mut posed = false;
        for det in d.detections_of(camera) {
            let Some(pose) = board_pose(d, state, mode, camera, det.timestep) else {
                continue;
            };
            posed = true;
            for (p, u) in points.iter().zip(&det.corners) {
                match project(k, &pose.transform_point(p)) {
                    Ok(px) => errs.push(((px.u - u.u).powi(2) + (px.v - u.v).powi(2)).sqrt()),
                    Err(_) => behind += 1,
                }
            }
        }
        if !posed {
            continue;
        }
        if behind > 0 {
            log::warn!("camera {camera}: {behind} corners behind the camera excluded from the statistics");
        }
        let n = errs.len();
        let (rms, mean, max) = if n == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt(),
                errs.iter().sum::<f64>() / n as f64,
                errs.iter().cloned().fold(0.0, f64::max),
            )
        };
        cameras.push(CameraReprojStats {
            camera_id: camera,
            rms,
            mean,
            max,
            corners: n,
            behind_camera: behind,
            plausible: rms <= PLAUSIBLE_RMS_PX && behind == 0,
        });
    }
    let m = cameras.len().max(1) as f64;
    let average = AverageRow {
        rms: cameras.iter().map(|c| c.rms).sum::<f64>() / m,
        mean: cameras.iter().map(|c| c.mean).sum::<f64>() / m,
        max: cameras.iter().map(|c| c.max).sum::<f64>() / m,
    };
    let converged = !cameras.is_empty() && cameras.iter().all(|c| c.plausible);
    ReprojectionReport {
        mode,
        cameras,
        average,
        converged,
    }
}

/// Aligned text table: one row per camera plus the average row.
pub fn format_table(report: &ReprojectionReport, label: &str) -> String {
    let mode = match report.mode {
        ReprojMode::Direct => "direct",
        ReprojMode::Chain => "chain",
    };
    let mut s = String::new();
    let _ = writeln!(s, "{label} (reprojection error, px, {mode} board poses)");
    let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10}", "camera", "rms", "mean", "max");
    for c in &report.cameras {
        let _ = writeln!(
            s,
            "{:<10} {:>10.4} {:>10.4} {:>10.4}",
            format!("camera {}", c.camera_id),
            c.rms,
            c.mean,
            c.max
        );
    }
    let a = &report.average;
    let _ = writeln!(s, "{:<10} {:>10.4} {:>10.4} {:>10.4}", "Average", a.rms, a.mean, a.max);
    s
}

/// Disagreement between an estimated CamToCam and the relative pose implied
/// by the two estimated WorldToCam transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConsistency {
    pub a: CameraId,
    pub d: CameraId,
    pub trans_gap: f64,
    pub rot_gap: f64,
}

pub fn pair_consistency(state: &GraphState) -> Vec<PairConsistency> {
    state
        .iter()
        .filter_map(|(v, pose)| match *v {
            VariableId::CamToCam { a, d } => {
                let implied = state.world_to_cam(a)?.inverse().compose(state.world_to_cam(d)?);
                let e = pose_error(pose, &implied);
                Some(PairConsistency {
                    a,
                    d,
                    trans_gap: e.trans_err,
                    rot_gap: e.rot_err,
                })
            }
            _ => None,
        })
        .collect()
}
