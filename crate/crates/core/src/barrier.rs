//! Softplus barrier and the barrier-augmented (unconstrained) problem.
//!
//! Inequalities are penalised by `(1/α) φ_β(g)` with the softplus
//! `φ_β(x) = β ln(1 + e^{x/β})`; equalities by `(1/(2α)) h²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::derivatives::{stack, DerivativeProvider, Jet, StageFunction, StageKind, TerminalFunction};
use crate::error::{Result, SocilError};
use crate::ocp::{check_theta, check_trajectory, ControlProblem, ParamVector, Trajectory};

pub const DEFAULT_OVERFLOW_THRESHOLD: f64 = 30.0;

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(SocilError::Config(format!("softplus sharpness must be positive, got {beta}")))
    }
}

/// φ_β(x) without argument checks.
#[inline]
pub(crate) fn softplus_raw(x: f64, beta: f64, threshold: f64) -> f64 {
    let s = x / beta;
    if s > threshold {
        x + beta * (-s).exp().ln_1p()
    } else {
        beta * s.exp().ln_1p()
    }
}

/// Logistic σ(s), saturating cleanly in both tails.
#[inline]
pub(crate) fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// σ(s)(1 − σ(s)) evaluated without cancellation.
#[inline]
fn logistic_slope(s: f64) -> f64 {
    let e = (-s.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn softplus(x: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(softplus_raw(x, beta, DEFAULT_OVERFLOW_THRESHOLD))
}

/// dφ_β/dx = σ(x/β).
pub fn softplus_grad(x: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(logistic(x / beta))
}

/// d²φ_β/dx² = σ(x/β)(1 − σ(x/β))/β.
pub fn softplus_hess(x: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(logistic_slope(x / beta) / beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    /// Penalties are scaled by `1/alpha`.
    pub alpha: f64,
    /// Softplus sharpness.
    pub beta: f64,
    #[serde(default = "default_threshold")]
    pub overflow_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_OVERFLOW_THRESHOLD
}

impl BarrierConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            overflow_threshold: DEFAULT_OVERFLOW_THRESHOLD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// β tied to α by the fixed ratio β = α/4.
    pub fn tied(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SocilError::Config(format!("barrier weight alpha must be positive, got {}", self.alpha)));
        }
        check_beta(self.beta)?;
        if !(self.overflow_threshold >= 10.0) {
            return Err(SocilError::Config(format!(
                "overflow threshold must be at least 10, got {}",
                self.overflow_threshold
            )));
        }
        Ok(())
    }

    /// Both parameters multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let cfg = Self {
            alpha: self.alpha * factor,
            beta: self.beta * factor,
            overflow_threshold: self.overflow_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn phi(&self, g: f64) -> f64 {
        softplus_raw(g, self.beta, self.overflow_threshold)
    }

    /// Penalty added to the stage cost for constraint values `g` and `h`.
    pub fn penalty(&self, g: &[f64], h: &[f64]) -> f64 {
        let ineq: f64 = g.iter().map(|&v| self.phi(v)).sum();
        let eq: f64 = h.iter().map(|v| v * v).sum();
        ineq / self.alpha + eq / (2.0 * self.alpha)
    }
}

/// Second-order expansion of one stage of the augmented problem.
#[derive(Debug, Clone)]
pub struct StageExpansion {
    /// Augmented stage cost `c_t + barrier terms`.
    pub cost: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub next_state: DVector<f64>,
    /// `n × vars`
    pub dyn_jac: DMatrix<f64>,
    /// Per state component, `vars × vars`.
    pub dyn_hess: Vec<DMatrix<f64>>,
}

/// Second-order expansion of the augmented terminal cost over `(x, θ)`.
#[derive(Debug, Clone)]
pub struct TerminalExpansion {
    pub cost: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Constrained problem rewritten as the barrier-augmented unconstrained problem.
///
/// With `barrier == None` all constraints are dropped entirely.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedProblem<'a, P> {
    pub problem: &'a P,
    pub barrier: Option<BarrierConfig>,
}

pub fn augment<P: ControlProblem>(problem: &P, cfg: BarrierConfig) -> AugmentedProblem<'_, P> {
    AugmentedProblem {
        problem,
        barrier: Some(cfg),
    }
}

impl<'a, P: ControlProblem> AugmentedProblem<'a, P> {
    /// The same problem with constraints ignored.
    pub fn unconstrained(problem: &'a P) -> Self {
        Self { problem, barrier: None }
    }

    pub fn stage_cost(&self, t: usize, x: &[f64], u: &[f64], theta: &[f64]) -> f64 {
        let c = self.problem.stage_cost(t, x, u, theta);
        match &self.barrier {
            Some(cfg) => {
                let g = self.problem.path_inequality(t, x, u, theta);
                let h = self.problem.path_equality(t, x, u, theta);
                c + cfg.penalty(&g, &h)
            }
            None => c,
        }
    }

    pub fn terminal_cost(&self, x: &[f64], theta: &[f64]) -> f64 {
        let c = self.problem.terminal_cost(x, theta);
        match &self.barrier {
            Some(cfg) => {
                let g = self.problem.terminal_inequality(x, theta);
                let h = self.problem.terminal_equality(x, theta);
                c + cfg.penalty(&g, &h)
            }
            None => c,
        }
    }

    /// Augmented objective J̄ of a trajectory.
    pub fn cost(&self, traj: &Trajectory, theta: &ParamVector) -> Result<f64> {
        check_theta(self.problem, theta)?;
        check_trajectory(self.problem, traj)?;
        Ok(self.cost_unchecked(traj, theta.as_slice()))
    }

    pub(crate) fn cost_unchecked(&self, traj: &Trajectory, theta: &[f64]) -> f64 {
        let stages: f64 = traj
            .states
            .iter()
            .zip(&traj.inputs)
            .enumerate()
            .map(|(t, (x, u))| self.stage_cost(t, x.as_slice(), u.as_slice(), theta))
            .sum();
        stages + self.terminal_cost(traj.states[traj.horizon()].as_slice(), theta)
    }

    /// Adds the barrier gradient/Hessian contributions of one constraint block.
    fn add_penalties(&self, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>, ineq: &Jet, eq: &Jet, second: bool) {
        let Some(cfg) = &self.barrier else { return };
        let inv_alpha = 1.0 / cfg.alpha;
        for i in 0..ineq.value.len() {
            let s = ineq.value[i] / cfg.beta;
            let sigma = logistic(s);
            let row = ineq.jacobian.row(i).transpose();
            grad.axpy(inv_alpha * sigma, &row, 1.0);
            if second {
                let curvature = inv_alpha * logistic_slope(s) / cfg.beta;
                hess.ger(curvature, &row, &row, 1.0);
                *hess += &ineq.hessians[i] * (inv_alpha * sigma);
            }
        }
        for i in 0..eq.value.len() {
            let h = eq.value[i];
            let row = eq.jacobian.row(i).transpose();
            grad.axpy(inv_alpha * h, &row, 1.0);
            if second {
                hess.ger(inv_alpha, &row, &row, 1.0);
                *hess += &eq.hessians[i] * (inv_alpha * h);
            }
        }
    }

    /// Expansion over `z = (x, u)` or, with `with_theta`, `z = (x, u, θ)`.
    /// Hessian rows are filled for the `(x, u)` coordinates only.
    pub fn stage_expansion(
        &self,
        provider: &DerivativeProvider,
        t: usize,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
        with_theta: bool,
    ) -> StageExpansion {
        let d = self.problem.dims();
        let z = stack(&[x, u, theta]);
        let hess_rows = d.state_dim + d.input_dim;
        let vars = if with_theta { z.len() } else { hess_rows };
        let jet = |kind| provider.jet(&StageFunction { problem: self.problem, t, kind }, &z, vars, hess_rows);

        let cost = jet(StageKind::Cost);
        let dynamics = jet(StageKind::Dynamics);
        let mut grad = cost.jacobian.row(0).transpose();
        let mut hess = cost.hessians[0].clone();
        let mut value = cost.value[0];
        if let Some(cfg) = &self.barrier {
            let ineq = jet(StageKind::Inequality);
            let eq = jet(StageKind::Equality);
            value += cfg.penalty(ineq.value.as_slice(), eq.value.as_slice());
            self.add_penalties(&mut grad, &mut hess, &ineq, &eq, true);
        }
        StageExpansion {
            cost: value,
            grad,
            hess,
            next_state: dynamics.value,
            dyn_jac: dynamics.jacobian,
            dyn_hess: dynamics.hessians,
        }
    }

    /// Expansion over `z = (x)` or, with `with_theta`, `z = (x, θ)`.
    pub fn terminal_expansion(
        &self,
        provider: &DerivativeProvider,
        x: &[f64],
        theta: &[f64],
        with_theta: bool,
    ) -> TerminalExpansion {
        let n = self.problem.dims().state_dim;
        let z = stack(&[x, theta]);
        let vars = if with_theta { z.len() } else { n };
        let jet = |kind| provider.jet(&TerminalFunction { problem: self.problem, kind }, &z, vars, n);
        let cost = jet(StageKind::Cost);
        let mut grad = cost.jacobian.row(0).transpose();
        let mut hess = cost.hessians[0].clone();
        let mut value = cost.value[0];
        if let Some(cfg) = &self.barrier {
            let ineq = jet(StageKind::Inequality);
            let eq = jet(StageKind::Equality);
            value += cfg.penalty(ineq.value.as_slice(), eq.value.as_slice());
            self.add_penalties(&mut grad, &mut hess, &ineq, &eq, true);
        }
        TerminalExpansion { cost: value, grad, hess }
    }
}

/// Multiplier estimates implied by a barrier solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    /// μ_t = (1/α) σ(g_t/β) for t < T.
    pub path_ineq: Vec<DVector<f64>>,
    /// ν_t = h_t/α.
    pub path_eq: Vec<DVector<f64>>,
    pub term_ineq: DVector<f64>,
    pub term_eq: DVector<f64>,
}

pub fn approximate_multipliers<P: ControlProblem>(
    problem: &P,
    traj: &Trajectory,
    theta: &ParamVector,
    cfg: &BarrierConfig,
) -> Result<Multipliers> {
    cfg.validate()?;
    let values = crate::ocp::evaluate_constraints(problem, traj, theta)?;
    let mu = |g: &DVector<f64>| g.map(|v| logistic(v / cfg.beta) / cfg.alpha);
    let nu = |h: &DVector<f64>| h / cfg.alpha;
    Ok(Multipliers {
        path_ineq: values.path_ineq.iter().map(mu).collect(),
        path_eq: values.path_eq.iter().map(nu).collect(),
        term_ineq: mu(&values.term_ineq),
        term_eq: nu(&values.term_eq),
    })
}
