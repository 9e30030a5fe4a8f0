//! Synthetic eye-on-base work cell: cameras on a ring around the robot
//! workspace, a board carried by the end effector, sampled robot poses and
//! three independent noise sources (pixel, robot translation, robot
//! rotation).
//!
//! Noise is applied to the *recorded* measurements only. The ground truth
//! returned next to the dataset is the unperturbed scene.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{pose_error, reprojection_stats, ReprojMode};
use crate::geometry::{project, so3_exp, CameraIntrinsics, Isometry3, Pixel};
use crate::graph::{GraphProblem, GraphState, VariableId};
use crate::model::{detection_counts, BoardModel, CameraEntry, CameraId, Dataset, Detection};
use crate::pipeline::{calibrate_multi, calibrate_single, CalibrationOptions};

/// Corners closer than this to a camera do not count as visible.
pub const MIN_VISIBLE_DEPTH: f64 = 0.05;

/// Box of end-effector positions plus a cone of board orientations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    /// Half angle of the orientation cone around "board faces a camera".
    pub cone_half_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub cameras: Vec<CameraEntry>,
    /// Ground-truth camera poses in the world frame, one per camera.
    pub world_to_cam: Vec<Isometry3>,
    pub board: BoardModel,
    pub hand_to_board: Isometry3,
    pub n_poses: usize,
    pub workspace: Workspace,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 3 cameras, 60 poses.
    Desk,
    /// 5 cameras, 150 poses.
    PaperScale,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-scale" => Ok(Preset::PaperScale),
            other => Err(Error::InvalidSpec(format!("unknown preset `{other}`"))),
        }
    }
}

/// Camera at `position` looking at `target`, image y pointing down.
pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Isometry3 {
    let z = (target - position).normalize();
    let up = Vector3::z();
    let x = if z.cross(&up).norm() > 1e-9 {
        z.cross(&up).normalize()
    } else {
        Vector3::x()
    };
    let y = z.cross(&x);
    Isometry3::from_matrix_parts(&Matrix3::from_columns(&[x, y, z]), position)
}

impl SceneSpec {
    /// `n_cameras` cameras on a ring of radius 1.5 m at height 1.2 m, all
    /// looking at the workspace center.
    pub fn ring(n_cameras: usize, n_poses: usize, seed: u64) -> Self {
        let center = Vector3::new(0.0, 0.0, 0.6);
        let intrinsics = CameraIntrinsics {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let world_to_cam = (0..n_cameras)
            .map(|a| {
                let phi = 2.0 * std::f64::consts::PI * a as f64 / n_cameras as f64 + 0.3;
                let pos = Vector3::new(1.5 * phi.cos(), 1.5 * phi.sin(), 1.2);
                look_at(pos, center)
            })
            .collect();
        Self {
            cameras: (0..n_cameras)
                .map(|id| CameraEntry { id, intrinsics })
                .collect(),
            world_to_cam,
            board: BoardModel {
                rows: 5,
                cols: 7,
                square_size: 0.04,
            },
            hand_to_board: Isometry3::new(
                so3_exp(&Vector3::new(0.1, -0.15, 0.3)),
                Vector3::new(0.02, -0.03, 0.08),
            ),
            n_poses,
            workspace: Workspace {
                center: [center.x, center.y, center.z],
                half_extent: [0.3, 0.3, 0.2],
                cone_half_angle: 0.5,
            },
            seed,
        }
    }

    pub fn preset(p: Preset, seed: u64) -> Self {
        match p {
            Preset::Desk => Self::ring(3, 60, seed),
            Preset::PaperScale => Self::ring(5, 150, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::InvalidSpec("at least one camera is required".into()));
        }
        if self.cameras.len() != self.world_to_cam.len() {
            return Err(Error::InvalidSpec("one ground-truth pose per camera".into()));
        }
        if self.n_poses < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least 3 robot poses, got {}",
                self.n_poses
            )));
        }
        self.board
            .validate()
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        for c in &self.cameras {
            c.intrinsics
                .validate()
                .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        }
        let w = &self.workspace;
        if w.half_extent.iter().any(|h| !(*h >= 0.0)) || !(w.cone_half_angle >= 0.0) {
            return Err(Error::InvalidSpec("workspace extents must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per pixel coordinate, px.
    pub pixel_sigma: f64,
    /// Per axis on the recorded robot translation, m.
    pub trans_sigma: f64,
    /// Per axis of a right-composed rotation vector on the recorded robot
    /// rotation, rad.
    pub rot_sigma: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.pixel_sigma, self.trans_sigma, self.rot_sigma]
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::InvalidSpec("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTruth {
    pub camera_id: CameraId,
    pub world_to_cam: Isometry3,
}

/// Unperturbed scene behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cameras: Vec<CameraTruth>,
    pub hand_to_board: Isometry3,
    pub robot_poses: Vec<Isometry3>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl GroundTruth {
    pub fn world_to_cam(&self, camera: CameraId) -> Option<&Isometry3> {
        self.cameras
            .iter()
            .find(|c| c.camera_id == camera)
            .map(|c| &c.world_to_cam)
    }

    pub fn cam_to_board(&self, camera: CameraId, timestep: usize) -> Option<Isometry3> {
        Some(
            self.world_to_cam(camera)?
                .inverse()
                .compose(self.robot_poses.get(timestep)?)
                .compose(&self.hand_to_board),
        )
    }

    /// True value of every variable of `problem`.
    pub fn state_for(&self, problem: &GraphProblem) -> Result<GraphState> {
        let mut s = GraphState::new();
        for v in &problem.variables {
            let value = match *v {
                VariableId::WorldToCam(a) => self.world_to_cam(a).copied(),
                VariableId::HandToBoard => Some(self.hand_to_board),
                VariableId::CamToBoard { camera, timestep } => self.cam_to_board(camera, timestep),
                VariableId::CamToCam { a, d } => self
                    .world_to_cam(a)
                    .zip(self.world_to_cam(d))
                    .map(|(wa, wd)| wa.inverse().compose(wd)),
            };
            s.insert(*v, value.ok_or(Error::UnknownCamera(usize::MAX))?);
        }
        Ok(s)
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Samples the true board poses: a position uniform in the workspace box
/// and an orientation facing camera `i mod N`, rolled uniformly about the
/// viewing ray and tilted by up to the cone half angle.
fn sample_board_poses(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Isometry3> {
    let w = &spec.workspace;
    let board_center = Vector3::new(
        (spec.board.cols - 1) as f64 * spec.board.square_size / 2.0,
        (spec.board.rows - 1) as f64 * spec.board.square_size / 2.0,
        0.0,
    );
    (0..spec.n_poses)
        .map(|i| {
            let pos = Vector3::from_fn(|k, _| {
                let h = w.half_extent[k];
                w.center[k] + if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 }
            });
            let cam = spec.world_to_cam[i % spec.world_to_cam.len()].translation;
            let facing = look_at(cam, pos);
            let roll = so3_exp(&(Vector3::z() * rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)));
            let tilt_angle = if w.cone_half_angle > 0.0 {
                rng.random_range(0.0..=w.cone_half_angle)
            } else {
                0.0
            };
            let tilt = so3_exp(&(random_unit(rng) * tilt_angle));
            let rotation = facing.rotation * roll * tilt;
            let translation = pos - rotation * board_center;
            Isometry3::new(rotation, translation)
        })
        .collect()
}

/// Board projection into one camera, `None` unless every corner lands in
/// the image at depth above [`MIN_VISIBLE_DEPTH`].
fn visible_projection(
    k: &CameraIntrinsics,
    cam_to_board: &Isometry3,
    corners: &[Vector3<f64>],
) -> Option<Vec<Pixel>> {
    corners
        .iter()
        .map(|p| {
            let pc = cam_to_board.transform_point(p);
            if pc.z <= MIN_VISIBLE_DEPTH {
                return None;
            }
            let px = project(k, &pc).ok()?;
            k.contains(&px).then_some(px)
        })
        .collect()
}

pub fn generate(spec: &SceneSpec, noise: &NoiseSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    noise.validate()?;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // separate stream so noise draws never shift the sampled geometry
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0x6e6f697365]));

    let board_poses = sample_board_poses(spec, &mut scene_rng);
    let board_to_hand = spec.hand_to_board.inverse();
    let true_robot: Vec<Isometry3> = board_poses.iter().map(|b| b.compose(&board_to_hand)).collect();
    let corners = spec.board.corners();

    let mut detections = Vec::new();
    for (i, board_pose) in board_poses.iter().enumerate() {
        for (cam, wtc) in spec.cameras.iter().zip(&spec.world_to_cam) {
            let ctb = wtc.inverse().compose(board_pose);
            if let Some(mut pixels) = visible_projection(&cam.intrinsics, &ctb, &corners) {
                for px in &mut pixels {
                    let n: [f64; 2] = [StandardNormal.sample(&mut noise_rng), StandardNormal.sample(&mut noise_rng)];
                    px.u += noise.pixel_sigma * n[0];
                    px.v += noise.pixel_sigma * n[1];
                }
                detections.push(Detection {
                    camera_id: cam.id,
                    timestep: i,
                    corners: pixels,
                });
            }
        }
    }

    let recorded: Vec<Isometry3> = true_robot
        .iter()
        .map(|pose| {
            let dt = gaussian3(&mut noise_rng) * noise.trans_sigma;
            let dr = gaussian3(&mut noise_rng) * noise.rot_sigma;
            if noise.trans_sigma == 0.0 && noise.rot_sigma == 0.0 {
                return *pose;
            }
            Isometry3::new(pose.rotation * so3_exp(&dr), pose.translation + dt)
        })
        .collect();

    let dataset = Dataset {
        board: spec.board,
        cameras: spec.cameras.clone(),
        robot_poses: recorded,
        detections,
    };
    for (camera, count) in detection_counts(&dataset) {
        if count < 3 {
            return Err(Error::EmptyVisibility { camera, count });
        }
    }
    let truth = GroundTruth {
        cameras: spec
            .cameras
            .iter()
            .zip(&spec.world_to_cam)
            .map(|(c, w)| CameraTruth {
                camera_id: c.id,
                world_to_cam: *w,
            })
            .collect(),
        hand_to_board: spec.hand_to_board,
        robot_poses: true_robot,
        noise: *noise,
        seed: spec.seed,
    };
    Ok((dataset, truth))
}

/// SplitMix64 finalizer folded over the inputs.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseAxis {
    /// Levels in pixels.
    Visual,
    /// Levels in millimeters.
    Translation,
    /// Levels in degrees.
    Rotation,
}

impl NoiseAxis {
    pub fn noise(&self, level: f64) -> NoiseSpec {
        match self {
            NoiseAxis::Visual => NoiseSpec {
                pixel_sigma: level,
                ..Default::default()
            },
            NoiseAxis::Translation => NoiseSpec {
                trans_sigma: level * 1e-3,
                ..Default::default()
            },
            NoiseAxis::Rotation => NoiseSpec {
                rot_sigma: level.to_radians(),
                ..Default::default()
            },
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseAxis::Visual => "visual",
            NoiseAxis::Translation => "translation",
            NoiseAxis::Rotation => "rotation",
        }
    }
}

impl std::str::FromStr for NoiseAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(NoiseAxis::Visual),
            "translation" => Ok(NoiseAxis::Translation),
            "rotation" => Ok(NoiseAxis::Rotation),
            other => Err(Error::InvalidSpec(format!("unknown noise axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "graph-single")]
    GraphSingle,
    #[serde(rename = "graph-multi")]
    GraphMulti,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GraphSingle => "graph-single",
            Method::GraphMulti => "graph-multi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph-single" => Ok(Method::GraphSingle),
            "graph-multi" => Ok(Method::GraphMulti),
            other => Err(Error::InvalidSpec(format!("unknown method `{other}`"))),
        }
    }
}

/// One CSV row: one camera of one (level, trial, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: NoiseAxis,
    pub level: f64,
    pub trial: usize,
    pub method: Method,
    pub camera_id: CameraId,
    pub trans_err_m: f64,
    pub rot_err_rad: f64,
    pub reproj_rms_px: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub level: f64,
    pub trial: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub level: f64,
    pub method: Method,
    pub mean_trans_err_m: f64,
    pub median_trans_err_m: f64,
    pub mean_rot_err_rad: f64,
    pub median_rot_err_rad: f64,
    pub mean_reproj_rms_px: f64,
    pub median_reproj_rms_px: f64,
    pub converged_fraction: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
    pub cells_total: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl SweepTable {
    pub fn cells_completed(&self) -> usize {
        self.cells_total - self.failures.len()
    }

    pub fn completion_ratio(&self) -> f64 {
        if self.cells_total == 0 {
            return 1.0;
        }
        self.cells_completed() as f64 / self.cells_total as f64
    }

    pub fn levels(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self.rows.iter().map(|r| r.level).collect();
        l.sort_by(|a, b| a.total_cmp(b));
        l.dedup();
        l
    }

    pub fn rows_for(&self, level: f64, method: Method) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.level == level && r.method == method)
    }

    /// Per (level, method) aggregate over trials and cameras.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut groups: BTreeMap<(u64, Method), Vec<&SweepRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.level.to_bits(), r.method)).or_default().push(r);
        }
        let mut out: Vec<CellSummary> = groups
            .into_iter()
            .map(|((bits, method), rows)| {
                let mut t: Vec<f64> = rows.iter().map(|r| r.trans_err_m).collect();
                let mut a: Vec<f64> = rows.iter().map(|r| r.rot_err_rad).collect();
                let mut p: Vec<f64> = rows.iter().map(|r| r.reproj_rms_px).collect();
                CellSummary {
                    level: f64::from_bits(bits),
                    method,
                    mean_trans_err_m: mean(&t),
                    median_trans_err_m: median(&mut t),
                    mean_rot_err_rad: mean(&a),
                    median_rot_err_rad: median(&mut a),
                    mean_reproj_rms_px: mean(&p),
                    median_reproj_rms_px: median(&mut p),
                    converged_fraction: rows.iter().filter(|r| r.converged).count() as f64
                        / rows.len() as f64,
                    rows: rows.len(),
                }
            })
            .collect();
        out.sort_by(|x, y| x.level.total_cmp(&y.level).then(x.method.cmp(&y.method)));
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for r in &self.rows {
            writer.serialize(r)?;
        }
        if self.rows.is_empty() {
            writer.write_record([
                "axis",
                "level",
                "trial",
                "method",
                "camera_id",
                "trans_err_m",
                "rot_err_rad",
                "reproj_rms_px",
                "converged",
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// (camera, translation error, rotation error, reprojection rms, converged)
type MethodRow = (CameraId, f64, f64, f64, bool);

/// Rows for one method on one generated dataset.
fn run_method(
    method: Method,
    dataset: &Dataset,
    truth: &GroundTruth,
    opts: &CalibrationOptions,
) -> Result<Vec<MethodRow>> {
    let mut out = Vec::new();
    let mut record = |camera: CameraId, state: &GraphState, converged: bool| -> Result<()> {
        let est = state.world_to_cam(camera).ok_or(Error::UnknownCamera(camera))?;
        let tru = truth.world_to_cam(camera).ok_or(Error::UnknownCamera(camera))?;
        let err = pose_error(est, tru);
        let stats = reprojection_stats(dataset, state, ReprojMode::Direct);
        let rms = stats
            .cameras
            .iter()
            .find(|c| c.camera_id == camera)
            .map(|c| c.rms)
            .unwrap_or(f64::NAN);
        out.push((camera, err.trans_err, err.rot_err, rms, converged));
        Ok(())
    };
    match method {
        Method::GraphMulti => {
            let cal = calibrate_multi(dataset, opts)?;
            for c in dataset.camera_ids() {
                record(c, &cal.report.state, cal.report.converged())?;
            }
        }
        Method::GraphSingle => {
            for c in dataset.camera_ids() {
                let cal = calibrate_single(dataset, c, opts)?;
                record(c, &cal.report.state, cal.report.converged())?;
            }
        }
    }
    Ok(out)
}

/// Runs generate + calibrate + evaluate for every (level, trial, method)
/// cell. Each (level, trial) owns a scene seed derived from the base seed,
/// so the table is a pure function of its inputs. Failed cells are
/// recorded and skipped.
pub fn noise_sweep(
    base: &SceneSpec,
    axis: NoiseAxis,
    levels: &[f64],
    trials: usize,
    methods: &[Method],
    opts: &CalibrationOptions,
) -> Result<SweepTable> {
    if levels.is_empty() {
        return Err(Error::InvalidSpec("sweep needs at least one level".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidSpec("sweep needs at least one trial".into()));
    }
    base.validate()?;
    let jobs: Vec<(f64, usize)> = levels
        .iter()
        .flat_map(|&l| (0..trials).map(move |t| (l, t)))
        .collect();
    let results: Vec<(Vec<SweepRow>, Vec<CellFailure>)> = jobs
        .par_iter()
        .map(|&(level, trial)| {
            let mut spec = base.clone();
            spec.seed = mix_seed(&[base.seed, level.to_bits(), trial as u64]);
            let noise = axis.noise(level);
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            match generate(&spec, &noise) {
                Err(e) => {
                    for &method in methods {
                        failures.push(CellFailure {
                            level,
                            trial,
                            method,
                            error: e.to_string(),
                        });
                    }
                }
                Ok((dataset, truth)) => {
                    for &method in methods {
                        match run_method(method, &dataset, &truth, opts) {
                            Ok(cams) => rows.extend(cams.into_iter().map(
                                |(camera_id, t, r, rms, converged)| SweepRow {
                                    axis,
                                    level,
                                    trial,
                                    method,
                                    camera_id,
                                    trans_err_m: t,
                                    rot_err_rad: r,
                                    reproj_rms_px: rms,
                                    converged,
                                },
                            )),
                            Err(e) => failures.push(CellFailure {
                                level,
                                trial,
                                method,
                                error: e.to_string(),
                            }),
                        }
                    }
                }
            }
            (rows, failures)
        })
        .collect();
    let mut table = SweepTable {
        cells_total: jobs.len() * methods.len(),
        ..Default::default()
    };
    for (rows, failures) in results {
        table.rows.extend(rows);
        table.failures.extend(failures);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::Weights;
    use crate::graph::build_multi;

    #[test]
    fn noise_free_records_truth() {
        let spec = SceneSpec::preset(Preset::Desk, 3);
        let (d, truth) = generate(&spec, &NoiseSpec::default()).unwrap();
        assert_eq!(d.robot_poses, truth.robot_poses);
        assert_eq!(d.robot_poses.len(), 60);
        assert_eq!(d.cameras.len(), 3);
        assert!(d.errors().is_empty());
        let p = build_multi(&d, Weights::default()).unwrap();
        let gt = truth.state_for(&p).unwrap();
        assert!(crate::solver::objective(&p, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn detections_lie_inside_the_image() {
        let (d, truth) = generate(&SceneSpec::preset(Preset::Desk, 5), &NoiseSpec::default()).unwrap();
        let corners = d.board.corners();
        for det in &d.detections {
            let k = d.intrinsics(det.camera_id).unwrap();
            let ctb = truth.cam_to_board(det.camera_id, det.timestep).unwrap();
            for (p, u) in corners.iter().zip(&det.corners) {
                let pc = ctb.transform_point(p);
                assert!(pc.z > MIN_VISIBLE_DEPTH);
                assert!(k.contains(u));
                let px = project(k, &pc).unwrap();
                assert!((px.u - u.u).abs() < 1e-9 && (px.v - u.v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pixel_noise_has_requested_spread() {
        let spec = SceneSpec::preset(Preset::Desk, 9);
        let (clean, _) = generate(&spec, &NoiseSpec::default()).unwrap();
        let noise = NoiseSpec {
            pixel_sigma: 0.5,
            ..Default::default()
        };
        let (noisy, _) = generate(&spec, &noise).unwrap();
        assert_eq!(clean.robot_poses, noisy.robot_poses);
        let mut diffs = Vec::new();
        for (a, b) in clean.detections.iter().zip(&noisy.detections) {
            assert_eq!((a.camera_id, a.timestep), (b.camera_id, b.timestep));
            for (p, q) in a.corners.iter().zip(&b.corners) {
                diffs.push(q.u - p.u);
                diffs.push(q.v - p.v);
            }
        }
        assert!(diffs.len() >= 10_000);
        let n = diffs.len() as f64;
        let m = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.45..=0.55).contains(&sd), "sample std {sd}");
    }

    #[test]
    fn pose_noise_touches_only_recorded_poses() {
        let spec = SceneSpec::preset(Preset::Desk, 2);
        let (clean, t0) = generate(&spec, &NoiseSpec::default()).unwrap();
        let noise = NoiseSpec {
            trans_sigma: 0.002,
            rot_sigma: 0.01,
            ..Default::default()
        };
        let (noisy, t1) = generate(&spec, &noise).unwrap();
        assert_eq!(t0.robot_poses, t1.robot_poses);
        assert_eq!(clean.detections, noisy.detections);
        assert!(clean.robot_poses != noisy.robot_poses);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec::preset(Preset::Desk, 17);
        let noise = NoiseSpec {
            pixel_sigma: 1.0,
            trans_sigma: 0.001,
            rot_sigma: 0.001,
        };
        let (a, ta) = generate(&spec, &noise).unwrap();
        let (b, tb) = generate(&spec, &noise).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
        let (c, _) = generate(&SceneSpec::preset(Preset::Desk, 18), &noise).unwrap();
        assert!(a.to_json().unwrap() != c.to_json().unwrap());
    }

    #[test]
    fn paper_scale_preset() {
        let (d, _) = generate(&SceneSpec::preset(Preset::PaperScale, 7), &NoiseSpec::default()).unwrap();
        assert_eq!(d.cameras.len(), 5);
        assert_eq!(d.robot_poses.len(), 150);
    }

    #[test]
    fn camera_facing_away_has_no_detections() {
        let mut spec = SceneSpec::ring(2, 10, 1);
        let away = look_at(Vector3::new(3.0, 0.0, 1.2), Vector3::new(6.0, 0.0, 1.2));
        spec.world_to_cam[1] = away;
        match generate(&spec, &NoiseSpec::default()) {
            Err(Error::EmptyVisibility { camera: 1, count: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SceneSpec::ring(0, 10, 1), &NoiseSpec::default()).is_err());
        assert!(generate(&SceneSpec::ring(2, 2, 1), &NoiseSpec::default()).is_err());
        let bad = NoiseSpec {
            pixel_sigma: -1.0,
            ..Default::default()
        };
        assert!(generate(&SceneSpec::ring(2, 10, 1), &bad).is_err());
    }

    #[test]
    fn sweep_noise_free_cell() {
        let spec = SceneSpec::ring(2, 12, 4);
        let t = noise_sweep(
            &spec,
            NoiseAxis::Visual,
            &[0.0],
            1,
            &[Method::GraphSingle],
            &CalibrationOptions::default(),
        )
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.failures.is_empty());
        for r in &t.rows {
            assert!(r.trans_err_m < 1e-6 && r.converged);
        }
    }

    #[test]
    fn sweep_counts_rows_and_is_reproducible() {
        let spec = SceneSpec::ring(2, 10, 8);
        let run = || {
            noise_sweep(
                &spec,
                NoiseAxis::Translation,
                &[0.0, 1.0],
                2,
                &[Method::GraphSingle, Method::GraphMulti],
                &CalibrationOptions::default(),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a.cells_total, 8);
        assert_eq!(a.rows.len(), 2 * 2 * 2 * 2);
        let mut csv_a = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        let mut csv_b = Vec::new();
        run().write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        let text = String::from_utf8(csv_a).unwrap();
        assert!(text.starts_with(
            "axis,level,trial,method,camera_id,trans_err_m,rot_err_rad,reproj_rms_px,converged\n"
        ));
        assert!(text.contains("translation,1.0,1,graph-multi,"));
        assert_eq!(a.summary().len(), 4);
    }

    #[test]
    fn sweep_rejects_empty_inputs() {
        let spec = SceneSpec::ring(2, 10, 8);
        let o = CalibrationOptions::default();
        assert!(noise_sweep(&spec, NoiseAxis::Visual, &[], 1, &[Method::GraphMulti], &o).is_err());
        assert!(noise_sweep(&spec, NoiseAxis::Visual, &[1.0], 0, &[Method::GraphMulti], &o).is_err());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut spec = SceneSpec::ring(2, 10, 1);
        spec.world_to_cam[1] = look_at(Vector3::new(3.0, 0.0, 1.2), Vector3::new(6.0, 0.0, 1.2));
        let t = noise_sweep(&spec, NoiseAxis::Visual, &[0.0], 2, &[Method::GraphMulti], &CalibrationOptions::default())
            .unwrap();
        assert_eq!(t.failures.len(), 2);
        assert_eq!(t.cells_completed(), 0);
    }

    #[test]
    fn axis_units() {
        assert_eq!(NoiseAxis::Visual.noise(2.0).pixel_sigma, 2.0);
        assert!((NoiseAxis::Translation.noise(5.0).trans_sigma - 0.005).abs() < 1e-15);
        assert!((NoiseAxis::Rotation.noise(0.5).rot_sigma - 0.5f64.to_radians()).abs() < 1e-15);
        assert_eq!("rotation".parse::<NoiseAxis>().unwrap(), NoiseAxis::Rotation);
        assert_eq!("paper-scale".parse::<Preset>().unwrap(), Preset::PaperScale);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
