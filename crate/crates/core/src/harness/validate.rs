//! Oracle suites behind `socil validate`: gradients against finite
//! differences, the EKF against hand-computed updates, and barrier limits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::continuation_solve;
use crate::barrier::{augment, softplus, AugmentedProblem, BarrierConfig};
use crate::error::Result;
use crate::estimator::{ekf_step, EstimatorState, MeasurementModel};
use crate::ocp::{evaluate_constraints, ControlProblem, ParamLayout, ParamVector};
use crate::pdp::{assemble_derivs, finite_difference_jacobian, pdp_jacobian};
use crate::systems::{ArmSpec, CartpoleSpec, LqrToy};
use crate::trajopt::{solve, SolverSettings};

/// The barrier pairs used for the cart-pole and the arm.
pub const BARRIER_PAIRS: [(f64, f64); 2] = [(0.3, 0.075), (0.08, 0.02)];

/// Absolute parameter step for the finite-difference Jacobian.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

/// Max relative error between the PDP Jacobian and central differences of
/// full re-solves at `θ`, after a tight continuation solve.
pub fn gradient_error<P: ControlProblem>(problem: &P, theta: &ParamVector, alpha: f64, beta: f64) -> Result<f64> {
    let settings = SolverSettings::tight();
    let cfg = BarrierConfig::new(alpha, beta)?;
    // approach tighter pairs from the looser cart-pole barrier
    let start = BarrierConfig::new(alpha.max(0.3), beta.max(0.075))?;
    let sol = continuation_solve(problem, theta, start, start.alpha / cfg.alpha, &settings)?;
    let aug = augment(problem, cfg);
    let sol = solve(&aug, theta, Some(&sol.trajectory), &settings)?;
    let derivs = assemble_derivs(&aug, &sol, theta, &settings.provider())?;
    let jac = pdp_jacobian(&derivs)?;
    let fd = finite_difference_jacobian(&aug, theta, &settings, FD_STEP, Some(&sol))?;
    Ok(jac.relative_error(&fd))
}

/// `∂u_0/∂θ` on the one-step toy against `−x_0/(1+θ)²`.
pub fn toy_closed_form_error(theta: f64) -> Result<f64> {
    let toy = LqrToy::new(1, 1.0);
    let th = toy.true_theta(theta);
    let aug = AugmentedProblem::unconstrained(&toy);
    let settings = SolverSettings::tight();
    let sol = solve(&aug, &th, None, &settings)?;
    let jac = pdp_jacobian(&assemble_derivs(&aug, &sol, &th, &settings.provider())?)?;
    Ok((jac.inputs[0][(0, 0)] + 1.0 / ((1.0 + theta) * (1.0 + theta))).abs())
}

pub fn gradient_suite() -> Result<Vec<Check>> {
    let mut out = vec![Check::at_most(
        "gradient",
        "lqr-toy closed form",
        toy_closed_form_error(1.0)?,
        1e-6,
    )];
    let toy = LqrToy::new(5, 1.0).with_input_bound(0.3);
    let cart = CartpoleSpec::default().build_problem()?;
    let arm = ArmSpec::default().build_problem()?;
    for (alpha, beta) in BARRIER_PAIRS {
        let tag = format!("(α, β) = ({alpha}, {beta})");
        out.push(Check::at_most(
            "gradient",
            format!("lqr-toy {tag}"),
            gradient_error(&toy, &toy.true_theta(1.0), alpha, beta)?,
            1e-3,
        ));
        out.push(Check::at_most(
            "gradient",
            format!("cartpole {tag}"),
            gradient_error(&cart, &cart.spec.true_theta(), alpha, beta)?,
            1e-3,
        ));
        out.push(Check::at_most(
            "gradient",
            format!("arm {tag}"),
            gradient_error(&arm, &arm.spec.true_theta(), alpha, beta)?,
            1e-3,
        ));
    }
    Ok(out)
}

/// Largest entry gap between the EKF covariance update and the Joseph form
/// `(I − KL) P (I − KL)ᵀ + K R Kᵀ`, plus whether every iterate stayed SPD.
pub fn ekf_random_walk(steps: usize, seed: u64) -> Result<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, r) = (3, 2);
    let theta = ParamVector::new(ParamLayout::new(1, 1, 1), vec![1.0, -0.5, 2.0])?;
    let mut state = EstimatorState::new(theta, 1.0)?;
    let model = MeasurementModel::new(DMatrix::identity(r, r), DMatrix::identity(r, r) * 0.5)?;
    let mut worst = 0.0f64;
    let mut spd = true;
    for _ in 0..steps {
        let l = DMatrix::from_fn(r, p, |_, _| rng.random_range(-1.0..1.0));
        let innovation = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let (next, rep) = ekf_step(&state, &l, &innovation, &model, false)?;
        let ikl = DMatrix::identity(p, p) - &rep.kalman_gain * &l;
        let joseph = &ikl * &state.cov * ikl.transpose() + &rep.kalman_gain * &model.noise_cov * rep.kalman_gain.transpose();
        worst = worst.max((&next.cov - joseph).amax() / state.cov.amax());
        spd &= next.cov.clone().cholesky().is_some() && (&next.cov - next.cov.transpose()).amax() == 0.0;
        state = next;
    }
    Ok((worst, spd))
}

pub fn estimator_suite() -> Result<Vec<Check>> {
    // P = 1, L = 1, R = 1: K = 1/2, P⁺ = 1/2, θ̂⁺ = θ̂ − 1/2
    let model = MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?;
    let state = EstimatorState::new(ParamVector::from_parts(&[], &[2.0], &[])?, 1.0)?;
    let (next, rep) = ekf_step(&state, &DMatrix::identity(1, 1), &DVector::from_element(1, 1.0), &model, false)?;
    let scalar = (rep.kalman_gain[(0, 0)] - 0.5)
        .abs()
        .max((next.cov[(0, 0)] - 0.5).abs())
        .max((next.theta_hat.as_slice()[0] - 1.5).abs());
    // two parameters, one output: L = [1 2], P = I, R = 1 → K = [1 2]ᵀ/6
    let state = EstimatorState::new(ParamVector::new(ParamLayout::new(1, 1, 0), vec![0.0, 0.0])?, 1.0)?;
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let (next, rep) = ekf_step(&state, &l, &DVector::from_element(1, 0.6), &model, false)?;
    let k_expected = DVector::from_vec(vec![1.0 / 6.0, 2.0 / 6.0]);
    let p_expected = DMatrix::from_row_slice(2, 2, &[5.0 / 6.0, -2.0 / 6.0, -2.0 / 6.0, 2.0 / 6.0]);
    let theta_expected = DVector::from_vec(vec![-0.1, -0.2]);
    let two = (rep.kalman_gain.column(0) - k_expected)
        .amax()
        .max((next.cov - p_expected).amax())
        .max((next.theta_hat.values() - theta_expected).amax());
    let (joseph, spd) = ekf_random_walk(1000, 7)?;
    Ok(vec![
        Check::at_most("estimator", "scalar hand update", scalar, 1e-12),
        Check::at_most("estimator", "2x1 hand update", two, 1e-12),
        Check::at_most("estimator", "Joseph-form agreement over 1000 steps", joseph, 1e-8),
        Check::at_most("estimator", "covariance SPD over 1000 steps", if spd { 0.0 } else { 1.0 }, 0.0),
    ])
}

/// Largest `|φ_β(x) − max(x, 0)| / (β ln 2)` over a grid; at most 1 by convexity.
pub fn softplus_relu_gap() -> Result<f64> {
    let mut worst = 0.0f64;
    for beta in [1e-3, 0.02, 0.075, 0.3, 1.0, 10.0] {
        for k in -400..=400 {
            let x = f64::from(k) * beta / 20.0;
            let gap = (softplus(x, beta)? - x.max(0.0)).abs();
            worst = worst.max(gap / (beta * std::f64::consts::LN_2));
        }
    }
    Ok(worst)
}

/// Errors `‖ξ − ξ_clamped‖∞` on the bounded one-step toy over successive
/// halvings of (α, β), with the largest constraint value seen.
///
/// Starts from the tighter pair: the interior offset is roughly
/// `β ln(1/(αμ))`, which only shrinks under halving once `ln(1/(αμ)) > ln 2`.
pub fn clamped_toy_errors(halvings: usize) -> Result<(Vec<f64>, f64)> {
    // unconstrained optimum −0.5 is clamped to the bound −0.3
    let bound = 0.3;
    let toy = LqrToy::new(1, 1.0).with_input_bound(bound);
    let th = toy.true_theta(1.0);
    let mut errors = Vec::new();
    let mut max_g = f64::NEG_INFINITY;
    let mut cfg = BarrierConfig::new(BARRIER_PAIRS[1].0, BARRIER_PAIRS[1].1)?;
    for _ in 0..=halvings {
        let aug = augment(&toy, cfg);
        let sol = solve(&aug, &th, None, &SolverSettings::tight())?;
        let (u, x1) = (sol.trajectory.inputs[0][0], sol.trajectory.states[1][0]);
        errors.push((u + bound).abs().max((x1 - (1.0 - bound)).abs()));
        max_g = max_g.max(evaluate_constraints(&toy, &sol.trajectory, &th)?.max_inequality());
        cfg = cfg.scaled(0.5)?;
    }
    Ok((errors, max_g))
}

pub fn barrier_suite() -> Result<Vec<Check>> {
    let (errors, max_g) = clamped_toy_errors(4)?;
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    Ok(vec![
        Check::at_most("barrier", "softplus - ReLU gap / (β ln 2)", softplus_relu_gap()?, 1.0),
        Check::at_most(
            "barrier",
            "clamped toy error decreasing over 4 halvings",
            if monotone { 0.0 } else { 1.0 },
            0.0,
        ),
        Check {
            suite: "barrier",
            name: "barrier solutions strictly feasible".into(),
            value: max_g,
            threshold: 0.0,
            passed: max_g < 0.0,
        },
    ])
}

pub fn run_all() -> Result<Vec<Check>> {
    let mut out = estimator_suite()?;
    out.extend(barrier_suite()?);
    out.extend(gradient_suite()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_and_barrier_suites_pass() {
        for c in estimator_suite().unwrap().into_iter().chain(barrier_suite().unwrap()) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn clamped_errors_shrink() {
        let (errors, max_g) = clamped_toy_errors(4).unwrap();
        assert_eq!(errors.len(), 5);
        assert!(errors[4] < errors[0] && max_g < 0.0);
    }
}
