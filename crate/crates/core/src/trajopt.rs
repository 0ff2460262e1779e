//! Iterative LQR / DDP solver for the barrier-augmented problem.
//!
//! The backward pass uses Hamiltonian Hessians (cost curvature plus the
//! value-gradient-weighted dynamics curvature), so at convergence the value
//! gradients coincide with the costates of the first-order conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{AugmentedProblem, StageExpansion, TerminalExpansion};
use crate::derivatives::{DerivativeMode, DerivativeProvider};
use crate::error::{Result, SocilError};
use crate::ocp::{check_theta, check_trajectory, rollout, zero_inputs, ControlProblem, ParamVector, Trajectory};

/// Smallest eigenvalue of `Q_uu` below which regularization kicks in.
const MIN_CURVATURE: f64 = 1e-9;
/// Consecutive accepted steps with negligible decrease before the solver gives up.
const STALL_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative cost decrease counted as a stalled step.
    pub cost_tolerance: f64,
    /// Bound on `max_t ‖∂L̄_t/∂u‖∞` for convergence.
    pub gradient_tolerance: f64,
    pub initial_regularization: f64,
    pub regularization_growth: f64,
    pub regularization_shrink: f64,
    pub max_regularization: f64,
    pub line_search_shrink: f64,
    pub min_step: f64,
    pub derivatives: DerivativeMode,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-8,
            gradient_tolerance: 1e-6,
            initial_regularization: 1e-6,
            regularization_growth: 10.0,
            regularization_shrink: 0.5,
            max_regularization: 1e10,
            line_search_shrink: 0.5,
            min_step: 1e-8,
            derivatives: DerivativeMode::Analytic,
        }
    }
}

impl SolverSettings {
    /// Settings for oracle re-solves that must land on the minimizer to near round-off.
    pub fn tight() -> Self {
        Self {
            max_iterations: 500,
            cost_tolerance: 0.0,
            gradient_tolerance: 1e-11,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("initial_regularization", self.initial_regularization),
            ("regularization_growth", self.regularization_growth),
            ("regularization_shrink", self.regularization_shrink),
            ("max_regularization", self.max_regularization),
            ("line_search_shrink", self.line_search_shrink),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SocilError::Config(format!("solver setting {name} must be positive, got {v}")));
            }
        }
        if !(self.cost_tolerance >= 0.0) {
            return Err(SocilError::Config("solver cost_tolerance must be non-negative".into()));
        }
        if self.max_iterations == 0 {
            return Err(SocilError::Config("solver max_iterations must be at least 1".into()));
        }
        if self.regularization_growth <= 1.0 || self.regularization_shrink >= 1.0 || self.line_search_shrink >= 1.0 {
            return Err(SocilError::Config(
                "regularization growth must exceed 1; shrink factors must lie below 1".into(),
            ));
        }
        Ok(())
    }

    pub fn provider(&self) -> DerivativeProvider {
        DerivativeProvider { mode: self.derivatives }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: Trajectory,
    /// `costates[t]` holds λ_{t+1}, so the vector covers λ_1..λ_T.
    pub costates: Vec<DVector<f64>>,
    pub final_cost: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
}

/// Second-order model of the whole trajectory over `(x, u)`.
pub(crate) struct Expansion {
    pub stages: Vec<StageExpansion>,
    pub terminal: TerminalExpansion,
}

pub(crate) fn expand<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    provider: &DerivativeProvider,
    traj: &Trajectory,
    theta: &[f64],
    with_theta: bool,
) -> Expansion {
    let stages = traj
        .states
        .iter()
        .zip(&traj.inputs)
        .enumerate()
        .map(|(t, (x, u))| aug.stage_expansion(provider, t, x.as_slice(), u.as_slice(), theta, with_theta))
        .collect();
    let terminal = aug.terminal_expansion(provider, traj.states[traj.horizon()].as_slice(), theta, with_theta);
    Expansion { stages, terminal }
}

/// Costates λ_1..λ_T and `max_t ‖L̄_t^u‖∞`.
pub(crate) fn costates(exp: &Expansion, n: usize, m: usize) -> (Vec<DVector<f64>>, f64) {
    let horizon = exp.stages.len();
    let mut lambdas = vec![DVector::zeros(n); horizon];
    let mut next = exp.terminal.grad.rows(0, n).into_owned();
    let mut residual: f64 = 0.0;
    for t in (0..horizon).rev() {
        let s = &exp.stages[t];
        let fx = s.dyn_jac.view((0, 0), (n, n));
        let fu = s.dyn_jac.view((0, n), (n, m));
        let hu = s.grad.rows(n, m) + fu.transpose() * &next;
        residual = residual.max(hu.amax());
        let lambda_t = s.grad.rows(0, n) + fx.transpose() * &next;
        lambdas[t] = next;
        next = lambda_t;
    }
    (lambdas, residual)
}

struct Gains {
    k: Vec<DVector<f64>>,
    gain: Vec<DMatrix<f64>>,
    /// Predicted first- and second-order decrease terms.
    d1: f64,
    d2: f64,
}

fn backward_pass(exp: &Expansion, n: usize, m: usize, rho: f64, base_reg: f64) -> Option<Gains> {
    let horizon = exp.stages.len();
    let mut vx = exp.terminal.grad.rows(0, n).into_owned();
    let mut vxx = exp.terminal.hess.view((0, 0), (n, n)).into_owned();
    let mut k = vec![DVector::zeros(m); horizon];
    let mut gain = vec![DMatrix::zeros(m, n); horizon];
    let (mut d1, mut d2) = (0.0, 0.0);

    for t in (0..horizon).rev() {
        let s = &exp.stages[t];
        let nm = n + m;
        let mut h = s.hess.view((0, 0), (nm, nm)).into_owned();
        for (i, fh) in s.dyn_hess.iter().enumerate() {
            h += fh.view((0, 0), (nm, nm)) * vx[i];
        }
        let fx = s.dyn_jac.view((0, 0), (n, n));
        let fu = s.dyn_jac.view((0, n), (n, m));
        let qx = s.grad.rows(0, n) + fx.transpose() * &vx;
        let qu = s.grad.rows(n, m) + fu.transpose() * &vx;
        let vxx_fx = &vxx * fx;
        let vxx_fu = &vxx * fu;
        let qxx = h.view((0, 0), (n, n)) + fx.transpose() * &vxx_fx;
        let qux = h.view((n, 0), (m, n)) + fu.transpose() * &vxx_fx;
        let mut quu = h.view((n, n), (m, m)) + fu.transpose() * &vxx_fu;
        quu = (&quu + quu.transpose()) * 0.5;

        let min_eig = quu.clone().symmetric_eigenvalues().min();
        let mut shift = rho;
        if min_eig < MIN_CURVATURE {
            shift += base_reg + (-min_eig).max(0.0);
        }
        let quu_reg = &quu + DMatrix::identity(m, m) * shift;
        let chol = quu_reg.cholesky()?;
        let kt = -chol.solve(&qu);
        let kk = -chol.solve(&qux);

        d1 += kt.dot(&qu);
        d2 += 0.5 * kt.dot(&(&quu * &kt));

        let kt_quu = kk.transpose() * &quu;
        vx = &qx + &kt_quu * &kt + kk.transpose() * &qu + qux.transpose() * &kt;
        vxx = &qxx + &kt_quu * &kk + kk.transpose() * &qux + qux.transpose() * &kk;
        vxx = (&vxx + vxx.transpose()) * 0.5;
        k[t] = kt;
        gain[t] = kk;
    }
    Some(Gains { k, gain, d1, d2 })
}

fn forward_pass<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    theta: &ParamVector,
    base: &Trajectory,
    gains: &Gains,
    step: f64,
) -> Option<(Trajectory, f64)> {
    let problem = aug.problem;
    let th = theta.as_slice();
    let mut states = Vec::with_capacity(base.states.len());
    let mut inputs = Vec::with_capacity(base.inputs.len());
    states.push(base.states[0].clone());
    for t in 0..base.horizon() {
        let dx = &states[t] - &base.states[t];
        let u = &base.inputs[t] + &gains.k[t] * step + &gains.gain[t] * dx;
        let next = problem.dynamics(states[t].as_slice(), u.as_slice(), th);
        if next.iter().any(|v| !v.is_finite()) || problem.check_validity(&next, th).is_err() {
            return None;
        }
        inputs.push(u);
        states.push(DVector::from_vec(next));
    }
    let traj = Trajectory {
        states,
        inputs,
        rolled_out: true,
    };
    let cost = aug.cost_unchecked(&traj, th);
    cost.is_finite().then_some((traj, cost))
}

/// Local minimizer of the augmented objective for fixed θ.
pub fn solve<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    theta: &ParamVector,
    warm_start: Option<&Trajectory>,
    settings: &SolverSettings,
) -> Result<Solution> {
    settings.validate()?;
    if let Some(cfg) = &aug.barrier {
        cfg.validate()?;
    }
    let problem = aug.problem;
    check_theta(problem, theta)?;
    let d = problem.dims();
    let (n, m) = (d.state_dim, d.input_dim);
    let inputs = match warm_start {
        Some(w) => {
            check_trajectory(problem, w)?;
            w.inputs.clone()
        }
        None => zero_inputs(problem),
    };
    let mut traj = rollout(problem, theta, &inputs)?;
    let th = theta.as_slice();
    let mut cost = aug.cost_unchecked(&traj, th);
    let provider = settings.provider();
    if let Some(w) = warm_start {
        // Open-loop replay drifts on unstable dynamics once θ moves; tracking
        // the old trajectory with LQR feedback at the new θ keeps it close.
        let exp = expand(aug, &provider, w, th, false);
        if let Some(gains) = backward_pass(&exp, n, m, settings.initial_regularization, settings.initial_regularization) {
            if let Some((tracked, c)) = forward_pass(aug, theta, w, &gains, 0.0) {
                if c < cost || !cost.is_finite() {
                    traj = tracked;
                    cost = c;
                }
            }
        }
    }
    if !cost.is_finite() {
        return Err(SocilError::Solver("initial trajectory has non-finite cost".into()));
    }

    let mut rho = 0.0;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut exp = expand(aug, &provider, &traj, th, false);
    let (mut lambdas, mut stationarity) = costates(&exp, n, m);

    while stationarity > settings.gradient_tolerance && iterations < settings.max_iterations && stalled < STALL_LIMIT {
        iterations += 1;
        let Some(gains) = backward_pass(&exp, n, m, rho, settings.initial_regularization) else {
            rho = (rho * settings.regularization_growth).max(settings.initial_regularization);
            if rho > settings.max_regularization {
                break;
            }
            continue;
        };

        let mut step = 1.0;
        let mut accepted = None;
        // allow round-off sized increases so Newton steps near the optimum are not rejected
        let slack = 8.0 * f64::EPSILON * cost.abs().max(1.0);
        while step >= settings.min_step {
            if let Some((candidate, c)) = forward_pass(aug, theta, &traj, &gains, step) {
                let predicted = step * gains.d1 + step * step * gains.d2;
                if c < cost || (c <= cost + slack && predicted.abs() <= 100.0 * slack) {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            step *= settings.line_search_shrink;
        }

        match accepted {
            Some((candidate, c)) => {
                let decrease = (cost - c) / cost.abs().max(1e-300);
                // heavily regularized steps are short by design and say nothing about stalling
                stalled = if decrease < settings.cost_tolerance && rho <= settings.initial_regularization {
                    stalled + 1
                } else {
                    0
                };
                traj = candidate;
                cost = c;
                rho *= settings.regularization_shrink;
                if rho < settings.initial_regularization * 1e-3 {
                    rho = 0.0;
                }
                exp = expand(aug, &provider, &traj, th, false);
                (lambdas, stationarity) = costates(&exp, n, m);
            }
            None => {
                rho = (rho * settings.regularization_growth).max(settings.initial_regularization);
                if rho > settings.max_regularization {
                    break;
                }
            }
        }
    }

    if !stationarity.is_finite() {
        return Err(SocilError::Solver("non-finite stationarity residual".into()));
    }
    Ok(Solution {
        trajectory: traj,
        costates: lambdas,
        final_cost: cost,
        iterations,
        stationarity,
        converged: stationarity <= settings.gradient_tolerance,
    })
}

/// `max_t ‖∂L̄_t/∂u‖∞` with costates from the backward recursion along `traj`.
pub fn stationarity_residual<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    theta: &ParamVector,
    traj: &Trajectory,
    provider: &DerivativeProvider,
) -> Result<f64> {
    check_theta(aug.problem, theta)?;
    check_trajectory(aug.problem, traj)?;
    let d = aug.problem.dims();
    let exp = expand(aug, provider, traj, theta.as_slice(), false);
    Ok(costates(&exp, d.state_dim, d.input_dim).1)
}
