//! Levenberg-Marquardt over the product manifold of all pose variables.
//!
//! Each iteration linearizes every factor (in parallel), accumulates the
//! weighted normal equations in factor order, damps them with `mu * I` and
//! solves for a chart step per variable. The per-view board poses never
//! share a factor with each other, so by default the damped system is
//! solved by eliminating their 6x6 diagonal blocks first and factorizing the
//! small reduced system over the remaining variables; the dense path
//! factorizes the full matrix and gives the same step.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorFamily, JacobianConfig, Linearization};
use crate::geometry::Twist6;
use crate::graph::{GraphProblem, GraphState, VariableId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Eliminate per-view board poses, then factorize the reduced system.
    #[default]
    Reduced,
    /// Factorize the full damped normal matrix.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Initial damping relative to the largest diagonal entry of `J^T W J`.
    pub initial_damping: f64,
    pub damping_update: f64,
    pub rel_objective_tol: f64,
    pub gradient_inf_tol: f64,
    pub step_norm_tol: f64,
    pub jacobians: JacobianConfig,
    pub linear_solver: LinearSolver,
    /// Variables held at their initial value.
    pub frozen: BTreeSet<VariableId>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-4,
            damping_update: 2.0,
            rel_objective_tol: 1e-10,
            gradient_inf_tol: 1e-10,
            step_norm_tol: 1e-12,
            jacobians: JacobianConfig::default(),
            linear_solver: LinearSolver::default(),
            frozen: BTreeSet::new(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            self.initial_damping,
            self.rel_objective_tol,
            self.gradient_inf_tol,
            self.step_norm_tol,
        ];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.damping_update > 1.0) {
            return Err(Error::InvalidConfig("damping_update must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradientTolerance,
    ObjectiveTolerance,
    StepTolerance,
    MaxIterations,
}

impl TerminationReason {
    pub fn converged(&self) -> bool {
        !matches!(self, TerminationReason::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub state: GraphState,
    /// Objective after each iteration (index 0 is the initial objective).
    /// Rejected steps repeat the previous value.
    pub objective_trace: Vec<f64>,
    pub termination: TerminationReason,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Per family: `sqrt(sum |r|^2 / n)` with `n` the number of corners for
    /// the pixel families and the number of factors for the chain family.
    pub family_rms: BTreeMap<FactorFamily, f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    pub fn trace_is_monotone(&self) -> bool {
        self.objective_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

/// `T <- T * v2t(delta_T)` for every variable; `delta` is stacked in
/// `problem.variables` order.
pub fn retract(problem: &GraphProblem, state: &GraphState, delta: &DVector<f64>) -> GraphState {
    assert_eq!(delta.len(), 6 * problem.num_variables(), "delta dimension");
    let mut out = state.clone();
    for (k, v) in problem.variables.iter().enumerate() {
        if let Some(value) = state.get(v) {
            let d = Twist6::from_slice(&delta.as_slice()[6 * k..6 * k + 6]);
            out.insert(*v, value.retract(&d));
        }
    }
    out
}

/// Squared residual sum and residual count per family.
type FamilySums = BTreeMap<FactorFamily, (f64, usize)>;

/// Weighted objective; also returns the per-family squared sums.
fn evaluate(problem: &GraphProblem, state: &GraphState) -> Result<(f64, FamilySums)> {
    let residuals: Vec<Result<DVector<f64>>> = problem
        .factors
        .par_iter()
        .map(|f| f.residual(state, &problem.board_points))
        .collect();
    let mut total = 0.0;
    let mut families = FamilySums::new();
    for (f, r) in problem.factors.iter().zip(residuals) {
        let sq = r?.norm_squared();
        total += f.weight(&problem.weights) * sq;
        let e = families.entry(f.family()).or_default();
        e.0 += sq;
        e.1 += match f.family() {
            FactorFamily::Chain => 1,
            _ => problem.board_points.len(),
        };
    }
    Ok((total, families))
}

pub fn objective(problem: &GraphProblem, state: &GraphState) -> Result<f64> {
    evaluate(problem, state).map(|(f, _)| f)
}

pub fn family_rms(problem: &GraphProblem, state: &GraphState) -> Result<BTreeMap<FactorFamily, f64>> {
    let (_, fam) = evaluate(problem, state)?;
    Ok(fam
        .into_iter()
        .map(|(k, (sq, n))| (k, (sq / n.max(1) as f64).sqrt()))
        .collect())
}

/// Block layout of the normal equations: non-local variables form a dense
/// block, board poses are block-diagonal.
struct Layout {
    /// Position of each problem variable: `Ok(global)` or `Err(local)`.
    slot: Vec<std::result::Result<usize, usize>>,
    n_global: usize,
    n_local: usize,
    frozen: Vec<bool>,
}

impl Layout {
    fn new(problem: &GraphProblem, frozen: &BTreeSet<VariableId>) -> Self {
        let mut n_global = 0;
        let mut n_local = 0;
        let slot = problem
            .variables
            .iter()
            .map(|v| {
                if v.is_local() {
                    n_local += 1;
                    Err(n_local - 1)
                } else {
                    n_global += 1;
                    Ok(n_global - 1)
                }
            })
            .collect();
        Self {
            slot,
            n_global,
            n_local,
            frozen: problem.variables.iter().map(|v| frozen.contains(v)).collect(),
        }
    }
}

struct NormalEquations {
    h_gg: DMatrix<f64>,
    h_ll: Vec<Matrix6<f64>>,
    /// `6 n_global x 6` coupling block per local variable.
    h_gl: Vec<DMatrix<f64>>,
    g_g: DVector<f64>,
    g_l: Vec<Vector6<f64>>,
}

impl NormalEquations {
    fn zeros(layout: &Layout) -> Self {
        let ng = 6 * layout.n_global;
        Self {
            h_gg: DMatrix::zeros(ng, ng),
            h_ll: vec![Matrix6::zeros(); layout.n_local],
            h_gl: vec![DMatrix::zeros(ng, 6); layout.n_local],
            g_g: DVector::zeros(ng),
            g_l: vec![Vector6::zeros(); layout.n_local],
        }
    }

    fn max_diagonal(&self) -> f64 {
        let g = self.h_gg.diagonal().iter().copied().fold(0.0, f64::max);
        let l = self
            .h_ll
            .iter()
            .flat_map(|m| m.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0, f64::max);
        g.max(l)
    }

    fn gradient_inf_norm(&self) -> f64 {
        let g = self.g_g.amax();
        let l = self.g_l.iter().map(|v| v.amax()).fold(0.0, f64::max);
        g.max(l)
    }

    /// Flattened gradient in problem-variable order.
    fn gradient(&self, layout: &Layout) -> DVector<f64> {
        let mut g = DVector::zeros(6 * layout.slot.len());
        for (k, s) in layout.slot.iter().enumerate() {
            let src = match *s {
                Ok(gi) => self.g_g.rows(6 * gi, 6).into_owned(),
                Err(li) => DVector::from_column_slice(self.g_l[li].as_slice()),
            };
            g.rows_mut(6 * k, 6).copy_from(&src);
        }
        g
    }
}

fn assemble(problem: &GraphProblem, layout: &Layout, lins: &[Linearization]) -> NormalEquations {
    let mut ne = NormalEquations::zeros(layout);
    for (f, lin) in problem.factors.iter().zip(lins) {
        let w = f.weight(&problem.weights);
        let blocks: Vec<(usize, &DMatrix<f64>)> = lin
            .blocks
            .iter()
            .map(|(v, j)| (problem.variable_index(v).expect("declared variable"), j))
            .filter(|(k, _)| !layout.frozen[*k])
            .collect();
        for &(ka, ja) in &blocks {
            let g = w * ja.transpose() * &lin.residual;
            match layout.slot[ka] {
                Ok(ga) => {
                    let mut seg = ne.g_g.rows_mut(6 * ga, 6);
                    seg += &g;
                }
                Err(la) => ne.g_l[la] += Vector6::from_column_slice(g.as_slice()),
            }
            for &(kb, jb) in &blocks {
                let h = w * ja.transpose() * jb;
                match (layout.slot[ka], layout.slot[kb]) {
                    (Ok(ga), Ok(gb)) => {
                        let mut blk = ne.h_gg.view_mut((6 * ga, 6 * gb), (6, 6));
                        blk += &h;
                    }
                    (Err(la), Err(lb)) => {
                        debug_assert_eq!(la, lb, "board poses never share a factor");
                        ne.h_ll[la] += Matrix6::from_column_slice(h.as_slice());
                    }
                    (Ok(ga), Err(lb)) => {
                        let mut blk = ne.h_gl[lb].view_mut((6 * ga, 0), (6, 6));
                        blk += &h;
                    }
                    (Err(_), Ok(_)) => {} // mirrored by the (Ok, Err) case
                }
            }
        }
    }
    // frozen variables keep an identity diagonal and zero gradient: step is 0
    for (k, s) in layout.slot.iter().enumerate() {
        if layout.frozen[k] {
            match *s {
                Ok(g) => ne
                    .h_gg
                    .view_mut((6 * g, 6 * g), (6, 6))
                    .copy_from(&DMatrix::identity(6, 6)),
                Err(l) => ne.h_ll[l] = Matrix6::identity(),
            }
        }
    }
    ne
}

/// Solves `(H + mu I) delta = -g`; the result is in problem-variable order.
fn solve_step(
    ne: &NormalEquations,
    layout: &Layout,
    mu: f64,
    method: LinearSolver,
) -> Option<DVector<f64>> {
    let ng = 6 * layout.n_global;
    let mut delta_g = DVector::zeros(ng);
    let mut delta_l = vec![Vector6::zeros(); layout.n_local];
    match method {
        LinearSolver::Reduced => {
            let mut s = ne.h_gg.clone();
            for i in 0..ng {
                s[(i, i)] += mu;
            }
            let mut rhs = -&ne.g_g;
            let mut inv_ll = Vec::with_capacity(layout.n_local);
            for l in 0..layout.n_local {
                let damped = ne.h_ll[l] + Matrix6::identity() * mu;
                let inv = damped.cholesky()?.inverse();
                let w = &ne.h_gl[l] * inv;
                s -= &w * ne.h_gl[l].transpose();
                rhs += &w * ne.g_l[l];
                inv_ll.push(inv);
            }
            if ng > 0 {
                delta_g = s.cholesky()?.solve(&rhs);
            }
            for l in 0..layout.n_local {
                let coupling = ne.h_gl[l].transpose() * &delta_g;
                let r = -ne.g_l[l] - Vector6::from_column_slice(coupling.as_slice());
                delta_l[l] = inv_ll[l] * r;
            }
        }
        LinearSolver::Dense => {
            let n = 6 * layout.slot.len();
            let mut h = DMatrix::zeros(n, n);
            let pos: Vec<usize> = (0..layout.slot.len()).map(|k| 6 * k).collect();
            let global_pos: Vec<usize> = layout
                .slot
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.ok().map(|_| pos[k]))
                .collect();
            let local_pos: Vec<usize> = layout
                .slot
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.err().map(|_| pos[k]))
                .collect();
            for (ga, &pa) in global_pos.iter().enumerate() {
                for (gb, &pb) in global_pos.iter().enumerate() {
                    h.view_mut((pa, pb), (6, 6))
                        .copy_from(&ne.h_gg.view((6 * ga, 6 * gb), (6, 6)));
                }
            }
            for (l, &pl) in local_pos.iter().enumerate() {
                h.view_mut((pl, pl), (6, 6)).copy_from(&ne.h_ll[l]);
                for (ga, &pa) in global_pos.iter().enumerate() {
                    let blk = ne.h_gl[l].view((6 * ga, 0), (6, 6));
                    h.view_mut((pa, pl), (6, 6)).copy_from(&blk);
                    h.view_mut((pl, pa), (6, 6)).copy_from(&blk.transpose());
                }
            }
            for i in 0..n {
                h[(i, i)] += mu;
            }
            let g = ne.gradient(layout);
            return h.cholesky().map(|c| c.solve(&(-g)));
        }
    }
    let mut delta = DVector::zeros(6 * layout.slot.len());
    for (k, s) in layout.slot.iter().enumerate() {
        match *s {
            Ok(g) => delta.rows_mut(6 * k, 6).copy_from(&delta_g.rows(6 * g, 6)),
            Err(l) => delta.rows_mut(6 * k, 6).copy_from(&delta_l[l]),
        }
    }
    Some(delta)
}

fn linearize_all(
    problem: &GraphProblem,
    state: &GraphState,
    jac: &JacobianConfig,
) -> Result<Vec<Linearization>> {
    let lins: Vec<Result<Linearization>> = problem
        .factors
        .par_iter()
        .map(|f| f.linearize(state, &problem.board_points, jac.mode(f.family())))
        .collect();
    lins.into_iter().collect()
}

/// One damped step at `state` with the given damping; exposed so the two
/// linear solvers can be compared.
pub fn damped_step(
    problem: &GraphProblem,
    state: &GraphState,
    cfg: &SolverConfig,
    mu: f64,
) -> Result<DVector<f64>> {
    let layout = Layout::new(problem, &cfg.frozen);
    let lins = linearize_all(problem, state, &cfg.jacobians)?;
    let ne = assemble(problem, &layout, &lins);
    solve_step(&ne, &layout, mu, cfg.linear_solver).ok_or(Error::LinearSolve { iteration: 0 })
}

fn check_coverage(problem: &GraphProblem, state: &GraphState) -> Result<()> {
    for f in &problem.factors {
        for v in f.variables() {
            if state.get(&v).is_none() {
                return Err(Error::MissingVariable {
                    factor: f.name(),
                    variable: v,
                });
            }
        }
    }
    Ok(())
}

pub fn solve(problem: &GraphProblem, init: &GraphState, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    check_coverage(problem, init)?;
    let layout = Layout::new(problem, &cfg.frozen);

    let mut state = init.clone();
    let mut f = objective(problem, &state)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteResidual {
            factor: "objective".into(),
        });
    }
    let initial_objective = f;
    let mut trace = vec![f];
    let mut ne = assemble(problem, &layout, &linearize_all(problem, &state, &cfg.jacobians)?);
    let mut mu = cfg.initial_damping * ne.max_diagonal().max(f64::MIN_POSITIVE);
    let mut nu = cfg.damping_update;
    let mut accepted = 0;
    let mut termination = TerminationReason::MaxIterations;
    let mut iterations = 0;

    for iter in 0..cfg.max_iterations {
        if ne.gradient_inf_norm() <= cfg.gradient_inf_tol {
            termination = TerminationReason::GradientTolerance;
            break;
        }
        iterations = iter + 1;
        let delta = solve_step(&ne, &layout, mu, cfg.linear_solver)
            .ok_or(Error::LinearSolve { iteration: iter })?;
        if delta.norm() <= cfg.step_norm_tol {
            termination = TerminationReason::StepTolerance;
            trace.push(f);
            break;
        }
        let candidate = retract(problem, &state, &delta);
        // trial points where a corner falls behind a camera are rejected
        let f_new = objective(problem, &candidate).unwrap_or(f64::INFINITY);
        let g = ne.gradient(&layout);
        let predicted = delta.dot(&(mu * &delta - &g));
        let gain = (f - f_new) / predicted;
        if f_new.is_finite() && f_new < f && gain > 0.0 {
            let rel = (f - f_new) / f;
            state = candidate;
            f = f_new;
            accepted += 1;
            trace.push(f);
            ne = assemble(problem, &layout, &linearize_all(problem, &state, &cfg.jacobians)?);
            mu *= (1.0_f64 / 3.0).max(1.0 - (2.0 * gain - 1.0).powi(3));
            nu = cfg.damping_update;
            if rel <= cfg.rel_objective_tol {
                termination = TerminationReason::ObjectiveTolerance;
                break;
            }
        } else {
            trace.push(f);
            mu *= nu;
            nu *= cfg.damping_update;
        }
    }
    if termination == TerminationReason::MaxIterations && ne.gradient_inf_norm() <= cfg.gradient_inf_tol {
        termination = TerminationReason::GradientTolerance;
    }
    log::debug!(
        "lm: {iterations} iterations, {accepted} accepted, objective {initial_objective:.3e} -> {f:.3e} ({termination:?})"
    );
    let family_rms = family_rms(problem, &state)?;
    Ok(SolveReport {
        state,
        objective_trace: trace,
        termination,
        iterations,
        accepted_steps: accepted,
        initial_objective,
        final_objective: f,
        family_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::Weights;
    use crate::geometry::{so3_exp, Isometry3};
    use crate::graph::{build_multi, build_single};
    use crate::init::pnp_init;
    use crate::model::Dataset;
    use crate::synth::{generate, GroundTruth, NoiseSpec, SceneSpec};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, noise: NoiseSpec) -> (Dataset, GroundTruth) {
        generate(&SceneSpec::ring(2, 12, seed), &noise).unwrap()
    }

    fn max_error(p: &GraphProblem, a: &GraphState, b: &GraphState) -> f64 {
        p.variables
            .iter()
            .map(|v| a.get(v).unwrap().max_component_diff(b.get(v).unwrap()))
            .fold(0.0, f64::max)
    }

    fn jitter(state: &GraphState, rng: &mut ChaCha8Rng, t: f64, r: f64) -> GraphState {
        let mut out = GraphState::new();
        for (v, pose) in state.iter() {
            let mut u = || rng.random_range(-1.0..1.0);
            let dt = Vector3::new(u(), u(), u()) * t;
            let dr = Vector3::new(u(), u(), u()) * r;
            out.insert(*v, Isometry3::new(pose.rotation * so3_exp(&dr), pose.translation + dt));
        }
        out
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let (d, truth) = scene(1, NoiseSpec::default());
        let p = build_multi(&d, Weights::default()).unwrap();
        let gt = truth.state_for(&p).unwrap();
        let r = solve(&p, &gt, &SolverConfig::default()).unwrap();
        assert!(r.iterations <= 2, "{} iterations", r.iterations);
        assert!(r.final_objective < 1e-12);
        assert!(r.converged());
        assert!(max_error(&p, &r.state, &gt) < 1e-9);
    }

    #[test]
    fn recovers_truth_from_pnp() {
        for seed in 0..3 {
            let (d, truth) = scene(seed, NoiseSpec::default());
            let p = build_multi(&d, Weights::default()).unwrap();
            let r = solve(&p, &pnp_init(&p, &d).unwrap(), &SolverConfig::default()).unwrap();
            assert!(r.converged());
            assert!(max_error(&p, &r.state, &truth.state_for(&p).unwrap()) < 1e-6);
        }
    }

    #[test]
    fn recovers_truth_from_perturbed_starts() {
        let (d, truth) = scene(3, NoiseSpec::default());
        let p = build_multi(&d, Weights::default()).unwrap();
        let gt = truth.state_for(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let start = jitter(&gt, &mut rng, 0.02, 0.05);
            let r = solve(&p, &start, &SolverConfig::default()).unwrap();
            assert!(max_error(&p, &r.state, &gt) < 1e-5);
        }
    }

    #[test]
    fn trace_is_monotone_and_deterministic() {
        let (d, _) = scene(4, NoiseSpec {
            pixel_sigma: 1.0,
            trans_sigma: 0.002,
            rot_sigma: 0.002,
        });
        let p = build_multi(&d, Weights::default()).unwrap();
        let init = pnp_init(&p, &d).unwrap();
        let a = solve(&p, &init, &SolverConfig::default()).unwrap();
        let b = solve(&p, &init, &SolverConfig::default()).unwrap();
        assert!(a.trace_is_monotone());
        assert_eq!(a.objective_trace.len(), a.iterations + 1);
        let bits = |r: &SolveReport| r.objective_trace.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn reduced_and_dense_steps_agree() {
        let (d, truth) = scene(5, NoiseSpec::default());
        let p = build_multi(&d, Weights::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = jitter(&truth.state_for(&p).unwrap(), &mut rng, 0.01, 0.02);
        let reduced = damped_step(&p, &start, &SolverConfig::default(), 1e-3).unwrap();
        let dense_cfg = SolverConfig {
            linear_solver: LinearSolver::Dense,
            ..Default::default()
        };
        let dense = damped_step(&p, &start, &dense_cfg, 1e-3).unwrap();
        assert!((&reduced - &dense).norm() <= 1e-8 * dense.norm().max(1.0));
        let full = solve(&p, &start, &dense_cfg).unwrap();
        assert!(max_error(&p, &full.state, &truth.state_for(&p).unwrap()) < 1e-6);
    }

    #[test]
    fn numeric_jacobians_reach_the_same_solution() {
        let (d, truth) = scene(6, NoiseSpec::default());
        let p = build_single(&d, 0, Weights::default()).unwrap();
        let cfg = SolverConfig {
            jacobians: crate::factors::JacobianConfig::numeric(),
            ..Default::default()
        };
        let r = solve(&p, &pnp_init(&p, &d).unwrap(), &cfg).unwrap();
        assert!(max_error(&p, &r.state, &truth.state_for(&p).unwrap()) < 1e-6);
    }

    #[test]
    fn retract_examples() {
        let (d, truth) = scene(7, NoiseSpec::default());
        let p = build_single(&d, 0, Weights::default()).unwrap();
        let s = truth.state_for(&p).unwrap();
        let n = 6 * p.num_variables();
        assert!(max_error(&p, &retract(&p, &s, &DVector::zeros(n)), &s) < 1e-15);

        let mut delta = DVector::zeros(n);
        delta[6] = 0.1;
        delta[11] = 0.2;
        let moved = retract(&p, &s, &delta);
        let v = p.variables[1];
        let expected = s.get(&v).unwrap().compose(&crate::geometry::v2t(&Twist6::new(
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.2),
        )));
        assert!(moved.get(&v).unwrap().max_component_diff(&expected) < 1e-15);
        assert_eq!(moved.get(&p.variables[0]), s.get(&p.variables[0]));
    }

    #[test]
    fn frozen_variables_stay_put() {
        let (d, truth) = scene(8, NoiseSpec::default());
        let p = build_single(&d, 1, Weights::default()).unwrap();
        let gt = truth.state_for(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = jitter(&gt, &mut rng, 0.01, 0.02);
        let mut start = start;
        start.insert(VariableId::HandToBoard, *gt.hand_to_board().unwrap());
        let cfg = SolverConfig {
            frozen: [VariableId::HandToBoard].into_iter().collect(),
            ..Default::default()
        };
        let r = solve(&p, &start, &cfg).unwrap();
        assert_eq!(r.state.hand_to_board(), gt.hand_to_board());
        assert!(max_error(&p, &r.state, &gt) < 1e-6);
    }

    #[test]
    fn missing_variable_is_reported() {
        let (d, truth) = scene(9, NoiseSpec::default());
        let p = build_single(&d, 0, Weights::default()).unwrap();
        let mut s = GraphState::new();
        for (v, pose) in truth.state_for(&p).unwrap().iter() {
            if *v != VariableId::HandToBoard {
                s.insert(*v, *pose);
            }
        }
        match solve(&p, &s, &SolverConfig::default()) {
            Err(Error::MissingVariable { variable, .. }) => assert_eq!(variable, VariableId::HandToBoard),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            gradient_inf_tol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
