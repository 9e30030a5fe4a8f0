//! Variable layout and problem assembly for single- and multi-camera graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{ChainFactor, CrossFactor, Factor, FactorFamily, ReprojFactor, Weights};
use crate::geometry::{so3_log, CameraIntrinsics, Isometry3};
use crate::model::{covisibility, BoardModel, CameraId, Dataset};

/// Threshold on the second singular value of the normalized relative
/// rotation-axis matrix.
pub const MOTION_RANK_THRESHOLD: f64 = 1e-3;

/// Relative rotations smaller than this carry no axis information.
const MIN_RELATIVE_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableId {
    /// Camera `a` in the world frame.
    WorldToCam(CameraId),
    /// Board mount on the end effector, shared by all cameras.
    HandToBoard,
    /// Board in camera `camera` at `timestep`.
    CamToBoard { camera: CameraId, timestep: usize },
    /// Camera `d` expressed in camera `a`, with `a < d`.
    CamToCam { a: CameraId, d: CameraId },
}

impl VariableId {
    pub fn cam_to_cam(x: CameraId, y: CameraId) -> Self {
        VariableId::CamToCam {
            a: x.min(y),
            d: x.max(y),
        }
    }

    /// Per-view variables, eliminated first by the reduced solver.
    pub fn is_local(&self) -> bool {
        matches!(self, VariableId::CamToBoard { .. })
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariableId::WorldToCam(a) => write!(f, "world_to_cam[{a}]"),
            VariableId::HandToBoard => write!(f, "hand_to_board"),
            VariableId::CamToBoard { camera, timestep } => {
                write!(f, "cam_to_board[{camera}, t={timestep}]")
            }
            VariableId::CamToCam { a, d } => write!(f, "cam_to_cam[{a}->{d}]"),
        }
    }
}

/// Values of every variable of a problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphState {
    values: BTreeMap<VariableId, Isometry3>,
}

impl GraphState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, v: &VariableId) -> Option<&Isometry3> {
        self.values.get(v)
    }

    pub fn insert(&mut self, v: VariableId, value: Isometry3) {
        self.values.insert(v, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableId, &Isometry3)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn keys(&self) -> BTreeSet<VariableId> {
        self.values.keys().copied().collect()
    }

    pub fn world_to_cam(&self, camera: CameraId) -> Option<&Isometry3> {
        self.get(&VariableId::WorldToCam(camera))
    }

    pub fn hand_to_board(&self) -> Option<&Isometry3> {
        self.get(&VariableId::HandToBoard)
    }
}

#[derive(Serialize, Deserialize)]
struct StateEntry {
    variable: VariableId,
    pose: Isometry3,
}

impl Serialize for GraphState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<StateEntry> = self
            .values
            .iter()
            .map(|(variable, pose)| StateEntry {
                variable: *variable,
                pose: *pose,
            })
            .collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GraphState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<StateEntry>::deserialize(d)?;
        Ok(GraphState {
            values: entries.into_iter().map(|e| (e.variable, e.pose)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "camera")]
pub enum ProblemMode {
    Single(CameraId),
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GraphOptions {
    pub weights: Weights,
    /// Instantiate a cross factor for both `(a, d)` and `(d, a)` instead of
    /// one per unordered pair.
    pub cross_ordered_pairs: bool,
}

#[derive(Debug, Clone)]
pub struct GraphProblem {
    pub mode: ProblemMode,
    pub variables: Vec<VariableId>,
    index: HashMap<VariableId, usize>,
    pub factors: Vec<Factor>,
    pub board: BoardModel,
    pub board_points: Vec<Vector3<f64>>,
    pub intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    pub robot_poses: Vec<Isometry3>,
    pub weights: Weights,
    pub cross_ordered_pairs: bool,
}

impl PartialEq for GraphProblem {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.factors == other.factors
            && self.board == other.board
            && self.intrinsics == other.intrinsics
            && self.robot_poses == other.robot_poses
            && self.weights == other.weights
    }
}

/// Counts printed by `inspect` and embedded in result files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub mode: ProblemMode,
    pub cameras: usize,
    pub world_to_cam: usize,
    pub hand_to_board: usize,
    pub cam_to_board: usize,
    pub cam_to_cam: usize,
    pub chain_factors: usize,
    pub reproj_factors: usize,
    pub cross_factors: usize,
    pub covisible_pairs: usize,
}

impl GraphProblem {
    fn new(
        mode: ProblemMode,
        d: &Dataset,
        cameras: &[CameraId],
        opts: &GraphOptions,
    ) -> Self {
        Self {
            mode,
            variables: Vec::new(),
            index: HashMap::new(),
            factors: Vec::new(),
            board: d.board,
            board_points: d.board.corners(),
            intrinsics: cameras
                .iter()
                .filter_map(|&c| d.intrinsics(c).map(|k| (c, *k)))
                .collect(),
            robot_poses: d.robot_poses.clone(),
            weights: opts.weights,
            cross_ordered_pairs: opts.cross_ordered_pairs,
        }
    }

    fn add_variable(&mut self, v: VariableId) {
        if !self.index.contains_key(&v) {
            self.index.insert(v, self.variables.len());
            self.variables.push(v);
        }
    }

    pub fn variable_index(&self, v: &VariableId) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn cameras(&self) -> Vec<CameraId> {
        self.intrinsics.keys().copied().collect()
    }

    pub fn count_factors(&self, family: FactorFamily) -> usize {
        self.factors.iter().filter(|f| f.family() == family).count()
    }

    pub fn summary(&self) -> ProblemSummary {
        let count = |pred: fn(&VariableId) -> bool| self.variables.iter().filter(|v| pred(v)).count();
        let pairs: BTreeSet<(usize, VariableId)> = self
            .factors
            .iter()
            .filter_map(|f| match f {
                Factor::Cross(c) => Some((c.timestep, c.pair_variable())),
                _ => None,
            })
            .collect();
        ProblemSummary {
            mode: self.mode,
            cameras: self.intrinsics.len(),
            world_to_cam: count(|v| matches!(v, VariableId::WorldToCam(_))),
            hand_to_board: count(|v| matches!(v, VariableId::HandToBoard)),
            cam_to_board: count(|v| matches!(v, VariableId::CamToBoard { .. })),
            cam_to_cam: count(|v| matches!(v, VariableId::CamToCam { .. })),
            chain_factors: self.count_factors(FactorFamily::Chain),
            reproj_factors: self.count_factors(FactorFamily::Reproj),
            cross_factors: self.count_factors(FactorFamily::Cross),
            covisible_pairs: pairs.len(),
        }
    }

    /// Checks that every factor references declared variables only.
    pub fn check_consistency(&self) -> Result<()> {
        for f in &self.factors {
            for v in f.variables() {
                if !self.index.contains_key(&v) {
                    return Err(Error::MissingVariable {
                        factor: f.name(),
                        variable: v,
                    });
                }
            }
        }
        Ok(())
    }

    fn add_camera(&mut self, d: &Dataset, camera: CameraId) -> Result<()> {
        let k = *d.intrinsics(camera).ok_or(Error::UnknownCamera(camera))?;
        self.add_variable(VariableId::WorldToCam(camera));
        self.add_variable(VariableId::HandToBoard);
        for det in d.detections_of(camera) {
            self.add_variable(VariableId::CamToBoard {
                camera,
                timestep: det.timestep,
            });
            self.factors.push(Factor::Chain(ChainFactor {
                timestep: det.timestep,
                camera,
                hand_from_world: d.robot_poses[det.timestep].inverse(),
            }));
            self.factors.push(Factor::Reproj(ReprojFactor {
                timestep: det.timestep,
                camera,
                corners: det.corners.clone(),
                intrinsics: k,
            }));
        }
        Ok(())
    }
}

/// Checks the per-camera preconditions: at least three detections and robot
/// rotations whose relative axes span at least two dimensions.
pub fn check_observability(d: &Dataset, camera: CameraId) -> Result<()> {
    if d.intrinsics(camera).is_none() {
        return Err(Error::UnknownCamera(camera));
    }
    let dets = d.detections_of(camera);
    if dets.len() < 3 {
        return Err(Error::TooFewObservations {
            camera,
            count: dets.len(),
        });
    }
    let rotations: Vec<_> = dets
        .iter()
        .map(|det| d.robot_poses[det.timestep].rotation)
        .collect();
    let sigma2 = motion_spread(&rotations);
    if sigma2 < MOTION_RANK_THRESHOLD {
        return Err(Error::InsufficientMotion { camera, sigma2 });
    }
    Ok(())
}

/// Second singular value of the matrix whose rows are the unit axes of the
/// relative rotations (first-to-k and consecutive pairs), scaled by
/// `1/sqrt(rows)` so the result lies in `[0, 1]`.
pub fn motion_spread(rotations: &[nalgebra::UnitQuaternion<f64>]) -> f64 {
    let mut axes: Vec<Vector3<f64>> = Vec::new();
    let mut push = |a: &nalgebra::UnitQuaternion<f64>, b: &nalgebra::UnitQuaternion<f64>| {
        let rv = so3_log(&(a.inverse() * b));
        if rv.norm() > MIN_RELATIVE_ANGLE {
            axes.push(rv.normalize());
        }
    };
    for k in 1..rotations.len() {
        push(&rotations[0], &rotations[k]);
        if k >= 2 {
            push(&rotations[k - 1], &rotations[k]);
        }
    }
    if axes.len() < 2 {
        return 0.0;
    }
    let n = axes.len();
    let scale = 1.0 / (n as f64).sqrt();
    let m = DMatrix::from_fn(n, 3, |r, c| axes[r][c] * scale);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv[1]
}

pub fn build_single(d: &Dataset, camera: CameraId, w: Weights) -> Result<GraphProblem> {
    build_single_with(
        d,
        camera,
        &GraphOptions {
            weights: w,
            cross_ordered_pairs: false,
        },
    )
}

pub fn build_single_with(d: &Dataset, camera: CameraId, opts: &GraphOptions) -> Result<GraphProblem> {
    check_observability(d, camera)?;
    let mut p = GraphProblem::new(ProblemMode::Single(camera), d, &[camera], opts);
    p.add_camera(d, camera)?;
    Ok(p)
}

pub fn build_multi(d: &Dataset, w: Weights) -> Result<GraphProblem> {
    build_multi_with(
        d,
        &GraphOptions {
            weights: w,
            cross_ordered_pairs: false,
        },
    )
}

/// Stacks the single-camera graphs over all registered cameras and adds
/// inter-camera variables and cross factors where the board is co-visible.
/// A registry with one camera yields the single-camera problem.
pub fn build_multi_with(d: &Dataset, opts: &GraphOptions) -> Result<GraphProblem> {
    let cameras = d.camera_ids();
    if cameras.len() == 1 {
        return build_single_with(d, cameras[0], opts);
    }
    for &c in &cameras {
        check_observability(d, c)?;
    }
    let mut p = GraphProblem::new(ProblemMode::Multi, d, &cameras, opts);
    for &c in &cameras {
        p.add_camera(d, c)?;
    }
    for t in 0..d.num_timesteps() {
        let x = covisibility(d, t);
        let n = x.size();
        for ia in 0..n {
            for id in ia + 1..n {
                if !x.get(ia, id) {
                    continue;
                }
                let (a, dd) = (x.camera_ids[ia], x.camera_ids[id]);
                let (lo, hi) = (a.min(dd), a.max(dd));
                p.add_variable(VariableId::cam_to_cam(lo, hi));
                let mut pairs = vec![(lo, hi)];
                if opts.cross_ordered_pairs {
                    pairs.push((hi, lo));
                }
                for (obs, src) in pairs {
                    let det = d.detection(obs, t).expect("co-visible implies detected");
                    p.factors.push(Factor::Cross(CrossFactor::new(
                        t,
                        obs,
                        src,
                        det.corners.clone(),
                        p.intrinsics[&obs],
                    )?));
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{so3_exp, Pixel};
    use crate::model::{CameraEntry, Detection};

    fn rot(x: f64, y: f64, z: f64) -> Isometry3 {
        Isometry3::new(so3_exp(&Vector3::new(x, y, z)), Vector3::new(0.1 * x, 0.2, 0.3))
    }

    fn dataset(n_cams: usize, m: usize, visible: impl Fn(usize, usize) -> bool) -> Dataset {
        let k = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap();
        let board = BoardModel::new(2, 3, 0.05).unwrap();
        let robot_poses = (0..m)
            .map(|i| {
                let s = i as f64;
                rot(0.3 * (s * 1.3).sin(), 0.4 * (s * 0.7).cos(), 0.2 * s)
            })
            .collect();
        let mut detections = Vec::new();
        for c in 0..n_cams {
            for t in 0..m {
                if visible(c, t) {
                    detections.push(Detection {
                        camera_id: c,
                        timestep: t,
                        corners: vec![Pixel::new(10.0, 10.0); 6],
                    });
                }
            }
        }
        Dataset {
            board,
            cameras: (0..n_cams)
                .map(|id| CameraEntry { id, intrinsics: k })
                .collect(),
            robot_poses,
            detections,
        }
    }

    #[test]
    fn single_counts() {
        let d = dataset(1, 10, |_, _| true);
        let p = build_single(&d, 0, Weights::default()).unwrap();
        assert_eq!(p.num_variables(), 12);
        assert_eq!(p.factors.len(), 20);
        assert_eq!(p.count_factors(FactorFamily::Cross), 0);
        p.check_consistency().unwrap();
    }

    #[test]
    fn single_rejects_no_detections() {
        let d = dataset(1, 10, |_, _| false);
        assert!(matches!(
            build_single(&d, 0, Weights::default()),
            Err(Error::TooFewObservations { count: 0, .. })
        ));
        let d = dataset(1, 10, |_, t| t < 2);
        assert!(matches!(
            build_single(&d, 0, Weights::default()),
            Err(Error::TooFewObservations { count: 2, .. })
        ));
    }

    #[test]
    fn pure_translation_is_insufficient_motion() {
        let mut d = dataset(1, 10, |_, _| true);
        for (i, p) in d.robot_poses.iter_mut().enumerate() {
            *p = Isometry3::from_translation(0.1 * i as f64, 0.05, 0.3);
        }
        assert!(matches!(
            build_single(&d, 0, Weights::default()),
            Err(Error::InsufficientMotion { .. })
        ));
        // rotations about a single fixed axis are also rejected
        for (i, p) in d.robot_poses.iter_mut().enumerate() {
            *p = Isometry3::new(so3_exp(&Vector3::new(0.0, 0.0, 0.1 * i as f64)), p.translation);
        }
        assert!(matches!(
            build_single(&d, 0, Weights::default()),
            Err(Error::InsufficientMotion { .. })
        ));
    }

    #[test]
    fn rotation_axis_rank_oracle() {
        // axes x and y only: rank 2 -> accepted
        let qs: Vec<_> = [
            Vector3::zeros(),
            Vector3::new(0.5, 0.0, 0.0),
            Vector3::new(0.0, 0.5, 0.0),
        ]
        .iter()
        .map(so3_exp)
        .collect();
        assert!(motion_spread(&qs) > 0.1);
        let same: Vec<_> = (0..5).map(|_| so3_exp(&Vector3::new(0.3, 0.1, 0.0))).collect();
        assert_eq!(motion_spread(&same), 0.0);
    }

    #[test]
    fn multi_counts_all_covisible() {
        let d = dataset(2, 5, |_, _| true);
        let p = build_multi(&d, Weights::default()).unwrap();
        let s = p.summary();
        assert_eq!(s.world_to_cam + s.hand_to_board + s.cam_to_board, 13);
        assert_eq!(s.cam_to_cam, 1);
        assert_eq!(
            (s.chain_factors, s.reproj_factors, s.cross_factors),
            (10, 10, 5)
        );
        assert_eq!(s.covisible_pairs, 5);
        p.check_consistency().unwrap();

        let p = build_multi_with(
            &d,
            &GraphOptions {
                weights: Weights::default(),
                cross_ordered_pairs: true,
            },
        )
        .unwrap();
        assert_eq!(p.count_factors(FactorFamily::Cross), 10);
        assert_eq!(p.summary().covisible_pairs, 5);
    }

    #[test]
    fn multi_disjoint_visibility() {
        let d = dataset(2, 10, |c, t| t % 2 == c);
        let p = build_multi(&d, Weights::default()).unwrap();
        let s = p.summary();
        assert_eq!(s.cam_to_cam, 0);
        assert_eq!(s.cross_factors, 0);
        assert_eq!(s.hand_to_board, 1);
        assert_eq!(s.cam_to_board, 10);
    }

    #[test]
    fn multi_with_one_camera_equals_single() {
        let d = dataset(1, 6, |_, _| true);
        let a = build_multi(&d, Weights::default()).unwrap();
        let b = build_single(&d, 0, Weights::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variables, b.variables);
    }

    #[test]
    fn multi_reports_failing_camera() {
        let d = dataset(3, 8, |c, t| c != 2 || t < 2);
        match build_multi(&d, Weights::default()) {
            Err(Error::TooFewObservations { camera, .. }) => assert_eq!(camera, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gating_and_connectivity() {
        let d = dataset(3, 12, |c, t| (t + c) % 3 != 0);
        let p = build_multi(&d, Weights::default()).unwrap();
        let expected: usize = (0..12).map(|t| covisibility(&d, t).pair_count()).sum();
        assert_eq!(p.count_factors(FactorFamily::Cross), expected);
        for v in p.variables.iter().filter(|v| v.is_local()) {
            let VariableId::CamToBoard { camera, timestep } = *v else {
                unreachable!()
            };
            let touching: Vec<_> = p
                .factors
                .iter()
                .filter(|f| f.variables().contains(v))
                .collect();
            let chain = touching.iter().filter(|f| f.family() == FactorFamily::Chain).count();
            let reproj = touching.iter().filter(|f| f.family() == FactorFamily::Reproj).count();
            let cross = touching.iter().filter(|f| f.family() == FactorFamily::Cross).count();
            assert_eq!((chain, reproj), (1, 1));
            // cross factors use this board pose only when this camera is the source
            let partners_above = (0..3)
                .filter(|&o| o < camera && d.detection(o, timestep).is_some())
                .count();
            assert_eq!(cross, partners_above);
        }
    }

    #[test]
    fn state_json_round_trip() {
        let mut s = GraphState::new();
        s.insert(VariableId::HandToBoard, rot(0.1, 0.2, 0.3));
        s.insert(VariableId::cam_to_cam(2, 1), Isometry3::identity());
        s.insert(
            VariableId::CamToBoard {
                camera: 1,
                timestep: 4,
            },
            Isometry3::identity(),
        );
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("{\"cam_to_cam\":{\"a\":1,\"d\":2}}"));
        let back: GraphState = serde_json::from_str(&text).unwrap();
        assert_eq!(back.keys(), s.keys());
    }
}
