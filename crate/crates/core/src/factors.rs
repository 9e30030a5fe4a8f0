//! Residuals and Jacobians of the kinematic-chain, reprojection and
//! cross-observation error terms.
//!
//! All Jacobians are taken with respect to a right perturbation of each
//! connected variable in the chart, `T <- T * v2t(delta)`, with `delta`
//! ordered `[rho; theta]`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project, project_jacobian, skew, so3_right_jacobian_inv, t2v, CameraIntrinsics,
    Isometry3, Pixel, Twist6,
};
use crate::graph::{GraphProblem, GraphState, VariableId};
use crate::model::CameraId;

/// Relative weights of the reprojection and cross-observation terms. The
/// chain term has unit weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda1: 1e-6,
            lambda2: 1e-3,
        }
    }
}

impl Weights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2 };
        if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weights must be positive, got lambda1={lambda1} lambda2={lambda2}"
            )));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorFamily {
    Chain,
    Reproj,
    Cross,
}

impl fmt::Display for FactorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorFamily::Chain => "chain",
            FactorFamily::Reproj => "reproj",
            FactorFamily::Cross => "cross",
        })
    }
}

/// Loop `hand_from_world * world_to_cam * cam_to_board * board_to_hand`,
/// identity when the kinematic chain closes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFactor {
    pub timestep: usize,
    pub camera: CameraId,
    /// Inverse of the recorded robot pose at `timestep`.
    pub hand_from_world: Isometry3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojFactor {
    pub timestep: usize,
    pub camera: CameraId,
    pub corners: Vec<Pixel>,
    pub intrinsics: CameraIntrinsics,
}

/// Board corners carried through the source camera's board pose and the
/// inter-camera transform, projected into the observer camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFactor {
    pub timestep: usize,
    pub observer: CameraId,
    pub source: CameraId,
    /// Observer camera's own measurements at `timestep`.
    pub corners: Vec<Pixel>,
    pub intrinsics: CameraIntrinsics,
}

impl CrossFactor {
    pub fn new(
        timestep: usize,
        observer: CameraId,
        source: CameraId,
        corners: Vec<Pixel>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        if observer == source {
            return Err(Error::InvalidConfig(format!(
                "cross factor needs two distinct cameras, got {observer} twice"
            )));
        }
        Ok(Self {
            timestep,
            observer,
            source,
            corners,
            intrinsics,
        })
    }

    /// Canonical inter-camera variable; it stores `lo_T_hi` for `lo < hi`.
    pub fn pair_variable(&self) -> VariableId {
        VariableId::cam_to_cam(self.observer, self.source)
    }

    /// Whether the stored pair transform must be inverted to map source
    /// camera coordinates into the observer camera.
    fn inverted(&self) -> bool {
        self.observer > self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Chain(ChainFactor),
    Reproj(ReprojFactor),
    Cross(CrossFactor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    #[default]
    Analytic,
    Numeric,
}

/// Jacobian mode per factor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct JacobianConfig {
    pub chain: JacobianMode,
    pub reproj: JacobianMode,
    pub cross: JacobianMode,
}

impl JacobianConfig {
    pub fn numeric() -> Self {
        Self {
            chain: JacobianMode::Numeric,
            reproj: JacobianMode::Numeric,
            cross: JacobianMode::Numeric,
        }
    }

    pub fn mode(&self, family: FactorFamily) -> JacobianMode {
        match family {
            FactorFamily::Chain => self.chain,
            FactorFamily::Reproj => self.reproj,
            FactorFamily::Cross => self.cross,
        }
    }
}

/// Residual and per-variable Jacobian blocks (`residual_dim x 6` each).
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub blocks: Vec<(VariableId, DMatrix<f64>)>,
}

/// Central-difference step used by numeric Jacobians.
pub const FD_STEP: f64 = 1e-6;

pub fn chain_residual(
    f: &ChainFactor,
    world_to_cam: &Isometry3,
    cam_to_board: &Isometry3,
    hand_to_board: &Isometry3,
) -> Result<Vector6<f64>> {
    let chain = f
        .hand_from_world
        .compose(world_to_cam)
        .compose(cam_to_board)
        .compose(&hand_to_board.inverse());
    Ok(t2v(&chain)?.to_vector())
}

fn project_points(
    k: &CameraIntrinsics,
    transform: &Isometry3,
    points: &[Vector3<f64>],
    measured: &[Pixel],
) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(2 * points.len());
    for (j, (p, m)) in points.iter().zip(measured).enumerate() {
        let pc = transform.transform_point(p);
        let px = project(k, &pc).map_err(|e| match e {
            Error::BehindCamera { depth, .. } => Error::BehindCamera { corner: j, depth },
            e => e,
        })?;
        r[2 * j] = px.u - m.u;
        r[2 * j + 1] = px.v - m.v;
    }
    Ok(r)
}

/// Stacked `project(cam_to_board * P_j) - u_j` in board corner order.
pub fn reproj_residual(
    f: &ReprojFactor,
    cam_to_board: &Isometry3,
    board_points: &[Vector3<f64>],
) -> Result<DVector<f64>> {
    project_points(&f.intrinsics, cam_to_board, board_points, &f.corners)
}

/// `observer_to_source` maps source-camera coordinates into the observer
/// camera; `source_to_board` is the source camera's board pose.
pub fn cross_residual(
    f: &CrossFactor,
    observer_to_source: &Isometry3,
    source_to_board: &Isometry3,
    board_points: &[Vector3<f64>],
) -> Result<DVector<f64>> {
    let t = observer_to_source.compose(source_to_board);
    project_points(&f.intrinsics, &t, board_points, &f.corners)
}

impl Factor {
    pub fn family(&self) -> FactorFamily {
        match self {
            Factor::Chain(_) => FactorFamily::Chain,
            Factor::Reproj(_) => FactorFamily::Reproj,
            Factor::Cross(_) => FactorFamily::Cross,
        }
    }

    pub fn timestep(&self) -> usize {
        match self {
            Factor::Chain(f) => f.timestep,
            Factor::Reproj(f) => f.timestep,
            Factor::Cross(f) => f.timestep,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Factor::Chain(f) => format!("chain(camera {}, t {})", f.camera, f.timestep),
            Factor::Reproj(f) => format!("reproj(camera {}, t {})", f.camera, f.timestep),
            Factor::Cross(f) => format!(
                "cross(observer {}, source {}, t {})",
                f.observer, f.source, f.timestep
            ),
        }
    }

    /// Connected variables, in the order used by [`Factor::linearize`].
    pub fn variables(&self) -> Vec<VariableId> {
        match self {
            Factor::Chain(f) => vec![
                VariableId::WorldToCam(f.camera),
                VariableId::CamToBoard {
                    camera: f.camera,
                    timestep: f.timestep,
                },
                VariableId::HandToBoard,
            ],
            Factor::Reproj(f) => vec![VariableId::CamToBoard {
                camera: f.camera,
                timestep: f.timestep,
            }],
            Factor::Cross(f) => vec![
                f.pair_variable(),
                VariableId::CamToBoard {
                    camera: f.source,
                    timestep: f.timestep,
                },
            ],
        }
    }

    pub fn residual_dim(&self, corner_count: usize) -> usize {
        match self {
            Factor::Chain(_) => 6,
            Factor::Reproj(_) | Factor::Cross(_) => 2 * corner_count,
        }
    }

    pub fn weight(&self, w: &Weights) -> f64 {
        match self {
            Factor::Chain(_) => 1.0,
            Factor::Reproj(_) => w.lambda1,
            Factor::Cross(_) => w.lambda2,
        }
    }

    fn lookup(&self, state: &GraphState) -> Result<Vec<Isometry3>> {
        self.variables()
            .into_iter()
            .map(|v| {
                state.get(&v).copied().ok_or_else(|| Error::MissingVariable {
                    factor: self.name(),
                    variable: v,
                })
            })
            .collect()
    }

    fn residual_from(&self, values: &[Isometry3], board_points: &[Vector3<f64>]) -> Result<DVector<f64>> {
        match self {
            Factor::Chain(f) => {
                let r = chain_residual(f, &values[0], &values[1], &values[2])?;
                Ok(DVector::from_column_slice(r.as_slice()))
            }
            Factor::Reproj(f) => reproj_residual(f, &values[0], board_points),
            Factor::Cross(f) => {
                let pair = if f.inverted() {
                    values[0].inverse()
                } else {
                    values[0]
                };
                cross_residual(f, &pair, &values[1], board_points)
            }
        }
    }

    /// Unweighted residual at `state`.
    pub fn residual(&self, state: &GraphState, board_points: &[Vector3<f64>]) -> Result<DVector<f64>> {
        let values = self.lookup(state)?;
        let r = self
            .residual_from(&values, board_points)
            .map_err(|e| e.in_factor(self.name()))?;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteResidual { factor: self.name() });
        }
        Ok(r)
    }

    pub fn linearize(
        &self,
        state: &GraphState,
        board_points: &[Vector3<f64>],
        mode: JacobianMode,
    ) -> Result<Linearization> {
        let values = self.lookup(state)?;
        let residual = self
            .residual_from(&values, board_points)
            .map_err(|e| e.in_factor(self.name()))?;
        if residual.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteResidual { factor: self.name() });
        }
        let jacobians = match mode {
            JacobianMode::Analytic => self.analytic_jacobians(&values, &residual, board_points),
            JacobianMode::Numeric => self.numeric_jacobians(&values, board_points),
        }
        .map_err(|e| e.in_factor(self.name()))?;
        Ok(Linearization {
            residual,
            blocks: self.variables().into_iter().zip(jacobians).collect(),
        })
    }

    fn numeric_jacobians(
        &self,
        values: &[Isometry3],
        board_points: &[Vector3<f64>],
    ) -> Result<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(values.len());
        let mut perturbed = values.to_vec();
        for k in 0..values.len() {
            let mut jac: Option<DMatrix<f64>> = None;
            for c in 0..6 {
                let mut d = [0.0; 6];
                d[c] = FD_STEP;
                perturbed[k] = values[k].retract(&Twist6::from_slice(&d));
                let plus = self.residual_from(&perturbed, board_points)?;
                d[c] = -FD_STEP;
                perturbed[k] = values[k].retract(&Twist6::from_slice(&d));
                let minus = self.residual_from(&perturbed, board_points)?;
                let col = (plus - minus) / (2.0 * FD_STEP);
                let j = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), 6));
                j.set_column(c, &col);
            }
            perturbed[k] = values[k];
            out.push(jac.expect("six columns"));
        }
        Ok(out)
    }

    fn analytic_jacobians(
        &self,
        values: &[Isometry3],
        residual: &DVector<f64>,
        board_points: &[Vector3<f64>],
    ) -> Result<Vec<DMatrix<f64>>> {
        match self {
            Factor::Chain(f) => {
                let (wtc, ctb, htb) = (&values[0], &values[1], &values[2]);
                let bth = htb.inverse();
                let a_x = f.hand_from_world.compose(wtc);
                let a_x_y = a_x.compose(ctb);
                let theta = Vector3::new(residual[3], residual[4], residual[5]);
                let jr_inv = so3_right_jacobian_inv(&theta);
                let j_wtc = chain_block(&a_x, &ctb.compose(&bth), &jr_inv);
                let j_ctb = chain_block(&a_x_y, &bth, &jr_inv);
                let j_htb = -chain_block(&a_x_y, &bth, &jr_inv);
                Ok(vec![to_dmatrix6(&j_wtc), to_dmatrix6(&j_ctb), to_dmatrix6(&j_htb)])
            }
            Factor::Reproj(f) => {
                let ctb = &values[0];
                let r = ctb.rotation_matrix();
                let mut j = DMatrix::zeros(2 * board_points.len(), 6);
                for (idx, p) in board_points.iter().enumerate() {
                    let pc = ctb.transform_point(p);
                    let jp = project_jacobian(&f.intrinsics, &pc);
                    let d_rho = jp * r;
                    let d_theta = -jp * r * skew(p);
                    j.fixed_view_mut::<2, 3>(2 * idx, 0).copy_from(&d_rho);
                    j.fixed_view_mut::<2, 3>(2 * idx, 3).copy_from(&d_theta);
                }
                Ok(vec![j])
            }
            Factor::Cross(f) => {
                let pair = &values[0];
                let stb = &values[1];
                let obs_to_src = if f.inverted() { pair.inverse() } else { *pair };
                let r_os = obs_to_src.rotation_matrix();
                let r_sb = stb.rotation_matrix();
                let r_ob = r_os * r_sb;
                let n = board_points.len();
                let mut j_pair = DMatrix::zeros(2 * n, 6);
                let mut j_board = DMatrix::zeros(2 * n, 6);
                for (idx, p) in board_points.iter().enumerate() {
                    let q = stb.transform_point(p);
                    let pc = obs_to_src.transform_point(&q);
                    let jp = project_jacobian(&f.intrinsics, &pc);
                    let (dp_rho, dp_theta): (Matrix3<f64>, Matrix3<f64>) = if f.inverted() {
                        (-Matrix3::identity(), skew(&pc))
                    } else {
                        (r_os, -r_os * skew(&q))
                    };
                    j_pair
                        .fixed_view_mut::<2, 3>(2 * idx, 0)
                        .copy_from(&(jp * dp_rho));
                    j_pair
                        .fixed_view_mut::<2, 3>(2 * idx, 3)
                        .copy_from(&(jp * dp_theta));
                    j_board
                        .fixed_view_mut::<2, 3>(2 * idx, 0)
                        .copy_from(&(jp * r_ob));
                    j_board
                        .fixed_view_mut::<2, 3>(2 * idx, 3)
                        .copy_from(&(-jp * r_ob * skew(p)));
                }
                Ok(vec![j_pair, j_board])
            }
        }
    }
}

/// Derivative of `t2v(prefix * v2t(delta) * suffix)` at `delta = 0`, given
/// the inverse right Jacobian at the loop's rotation vector.
fn chain_block(prefix: &Isometry3, suffix: &Isometry3, jr_inv: &Matrix3<f64>) -> Matrix6<f64> {
    let r_p = prefix.rotation_matrix();
    let r_s = suffix.rotation_matrix();
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_p);
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-r_p * skew(&suffix.translation)));
    j.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(jr_inv * r_s.transpose()));
    j
}

fn to_dmatrix6(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

/// Analytic or numeric linearization of one factor at `state`.
pub fn factor_jacobian(
    factor: &Factor,
    problem: &GraphProblem,
    state: &GraphState,
    mode: JacobianMode,
) -> Result<Linearization> {
    factor.linearize(state, &problem.board_points, mode)
}

/// Weighted sum of squared residual norms over every factor of `problem`.
pub fn objective(problem: &GraphProblem, state: &GraphState, w: &Weights) -> Result<f64> {
    let mut total = 0.0;
    for f in &problem.factors {
        let r = f.residual(state, &problem.board_points)?;
        total += f.weight(w) * r.norm_squared();
    }
    Ok(total)
}

/// Copy of `values` with the `k`-th entry right-perturbed by `delta`.
#[cfg(test)]
pub(crate) fn perturb(values: &[Isometry3], k: usize, delta: &Twist6) -> Vec<Isometry3> {
    let mut out = values.to_vec();
    out[k] = out[k].retract(delta);
    out
}
