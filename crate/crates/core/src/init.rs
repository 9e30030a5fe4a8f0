//! Initial guesses: all-identity states and a planar PnP bootstrap.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Isometry3, Pixel};
use crate::graph::{GraphProblem, GraphState, VariableId};
use crate::model::{BoardModel, Dataset};

/// Relative singular-value level below which the DLT system counts as
/// rank deficient.
const DLT_RANK_TOL: f64 = 1e-8;

/// Relative spread below which a point set counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Start from identity; switch to PnP when identity puts board corners
    /// behind a camera.
    #[default]
    Identity,
    Pnp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitUsed {
    Identity,
    Pnp,
    /// Identity was requested but some reprojection factor was not
    /// evaluable there.
    PnpFallback,
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub state: GraphState,
    pub used: InitUsed,
}

pub fn identity_init(p: &GraphProblem) -> GraphState {
    let mut s = GraphState::new();
    for v in &p.variables {
        s.insert(*v, Isometry3::identity());
    }
    s
}

/// Hartley normalization: centroid to the origin, mean distance sqrt(2).
fn normalizing_transform(points: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateConfiguration("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn check_not_collinear(points: &[Vector2<f64>], what: &str) -> Result<()> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let cov = points
        .iter()
        .fold(nalgebra::Matrix2::zeros(), |a, p| a + (p - c) * (p - c).transpose())
        / n;
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo / hi < COLLINEAR_TOL {
        return Err(Error::DegenerateConfiguration(format!("{what} points are collinear")));
    }
    Ok(())
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Homography from board-plane coordinates to normalized image coordinates.
fn plane_homography(plane: &[Vector2<f64>], image: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let t_plane = normalizing_transform(plane)?;
    let t_image = normalizing_transform(image)?;
    let rows = (2 * plane.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (j, (p, q)) in plane.iter().zip(image).enumerate() {
        let x = apply(&t_plane, p);
        let u = apply(&t_image, q);
        let r0 = [-x.x, -x.y, -1.0, 0.0, 0.0, 0.0, u.x * x.x, u.x * x.y, u.x];
        let r1 = [0.0, 0.0, 0.0, -x.x, -x.y, -1.0, u.y * x.x, u.y * x.y, u.y];
        for c in 0..9 {
            a[(2 * j, c)] = r0[c];
            a[(2 * j + 1, c)] = r1[c];
        }
    }
    // eigen-decomposition of A^T A: smallest eigenvector is the null vector
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let largest = eig.eigenvalues[order[8]].max(0.0);
    let second = eig.eigenvalues[order[1]].max(0.0);
    if largest <= 0.0 || (second / largest).sqrt() < DLT_RANK_TOL {
        return Err(Error::DegenerateConfiguration(
            "homography system is rank deficient".into(),
        ));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_image_inv = t_image
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("singular normalization".into()))?;
    Ok(t_image_inv * hn * t_plane)
}

/// Closest rotation in the Frobenius sense.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

/// Board pose in the camera frame from one full detection, via a DLT
/// homography decomposed into rotation and translation.
pub fn planar_pnp(k: &CameraIntrinsics, board: &BoardModel, corners: &[Pixel]) -> Result<Isometry3> {
    let pts = crate::model::board_corners(board);
    if pts.len() < 4 || corners.len() != pts.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 matching corners, got {} board / {} image",
            pts.len(),
            corners.len()
        )));
    }
    let plane: Vec<Vector2<f64>> = pts.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let image: Vec<Vector2<f64>> = corners
        .iter()
        .map(|c| Vector2::new((c.u - k.cx) / k.fx, (c.v - k.cy) / k.fy))
        .collect();
    check_not_collinear(&plane, "board")?;
    check_not_collinear(&image, "image")?;

    let h = plane_homography(&plane, &image)?;
    let (h1, h2, h3) = (h.column(0), h.column(1), h.column(2));
    let mut scale = 0.5 * (h1.norm() + h2.norm());
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration("zero homography columns".into()));
    }
    // board origin must land in front of the camera
    if h3.z < 0.0 {
        scale = -scale;
    }
    let r1 = h1 / scale;
    let r2 = h2 / scale;
    let t = h3 / scale;
    let r = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let pose = Isometry3::from_matrix_parts(&r, t);
    if pts.iter().any(|p| pose.transform_point(p).z <= 0.0) {
        return Err(Error::Cheirality);
    }
    Ok(pose)
}

/// Board poses from per-view PnP; hand-to-board at identity; each camera
/// placed by closing the kinematic chain at its first detection; each
/// camera pair from its first co-visible timestep.
pub fn pnp_init(p: &GraphProblem, d: &Dataset) -> Result<GraphState> {
    let mut s = GraphState::new();
    for v in &p.variables {
        if let VariableId::CamToBoard { camera, timestep } = *v {
            let det = d.detection(camera, timestep).ok_or(Error::MissingVariable {
                factor: "pnp_init".into(),
                variable: *v,
            })?;
            let k = p.intrinsics.get(&camera).ok_or(Error::UnknownCamera(camera))?;
            let pose = planar_pnp(k, &p.board, &det.corners).map_err(|e| Error::Pnp {
                camera,
                timestep,
                source: Box::new(e),
            })?;
            s.insert(*v, pose);
        }
    }
    let hand_to_board = Isometry3::identity();
    let board_pose = |s: &GraphState, camera, timestep| {
        *s.get(&VariableId::CamToBoard { camera, timestep })
            .expect("every board pose initialized")
    };
    for v in &p.variables {
        match *v {
            VariableId::HandToBoard => s.insert(*v, hand_to_board),
            VariableId::WorldToCam(camera) => {
                let first = p
                    .variables
                    .iter()
                    .filter_map(|w| match *w {
                        VariableId::CamToBoard { camera: c, timestep } if c == camera => Some(timestep),
                        _ => None,
                    })
                    .min()
                    .ok_or(Error::TooFewObservations { camera, count: 0 })?;
                let world_to_cam = p.robot_poses[first]
                    .compose(&hand_to_board)
                    .compose(&board_pose(&s, camera, first).inverse());
                s.insert(*v, world_to_cam);
            }
            VariableId::CamToCam { a, d: dd } => {
                let t = (0..p.robot_poses.len())
                    .find(|&t| {
                        s.get(&VariableId::CamToBoard { camera: a, timestep: t }).is_some()
                            && s.get(&VariableId::CamToBoard { camera: dd, timestep: t }).is_some()
                    })
                    .ok_or(Error::MissingVariable {
                        factor: "pnp_init".into(),
                        variable: *v,
                    })?;
                let rel = board_pose(&s, a, t).compose(&board_pose(&s, dd, t).inverse());
                s.insert(*v, rel);
            }
            VariableId::CamToBoard { .. } => {}
        }
    }
    Ok(s)
}

/// Builds the starting state for `strategy`. Identity falls back to
/// [`pnp_init`] when any reprojection factor puts a corner behind its camera.
pub fn initialize(p: &GraphProblem, d: &Dataset, strategy: InitStrategy) -> Result<InitOutcome> {
    match strategy {
        InitStrategy::Pnp => Ok(InitOutcome {
            state: pnp_init(p, d)?,
            used: InitUsed::Pnp,
        }),
        InitStrategy::Identity => {
            let state = identity_init(p);
            match crate::solver::objective(p, &state) {
                Ok(f) if f.is_finite() => Ok(InitOutcome {
                    state,
                    used: InitUsed::Identity,
                }),
                Ok(_) => Err(Error::NonFiniteResidual {
                    factor: "objective at identity".into(),
                }),
                Err(e) if matches!(e.root(), Error::BehindCamera { .. }) => {
                    log::info!("identity initialization puts the board behind a camera ({e}); using pnp");
                    Ok(InitOutcome {
                        state: pnp_init(p, d)?,
                        used: InitUsed::PnpFallback,
                    })
                }
                Err(e) => Err(e),
            }
        }
    }
}
