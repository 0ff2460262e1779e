//! Browser bindings: softplus curves, safe versus unconstrained cart-pole
//! plans, and short online learning runs. Every function returns JSON.

use serde::Serialize;
use socil_core::barrier::{augment, softplus, AugmentedProblem, BarrierConfig};
use socil_core::harness::{run_online, Mode, RunConfig};
use socil_core::ocp::{evaluate_constraints, Trajectory};
use socil_core::systems::{CartpoleSpec, SystemKind};
use socil_core::trajopt::{solve, SolverSettings};
use wasm_bindgen::prelude::*;

fn js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    softplus: Vec<f64>,
    relu: Vec<f64>,
}

/// `φ_β(x)` and `max(x, 0)` on `points` samples of `[-range, range]`.
#[wasm_bindgen]
pub fn softplus_curve(beta: f64, range: f64, points: usize) -> Result<String, JsError> {
    if points < 2 || !(range > 0.0) {
        return Err(JsError::new("need at least two points and a positive range"));
    }
    let x: Vec<f64> = (0..points)
        .map(|k| -range + 2.0 * range * k as f64 / (points - 1) as f64)
        .collect();
    let softplus = x.iter().map(|&v| softplus(v, beta)).collect::<Result<_, _>>().map_err(js)?;
    let relu = x.iter().map(|v| v.max(0.0)).collect();
    to_json(&Curve { x, softplus, relu })
}

#[derive(Serialize)]
struct Plan {
    position: Vec<f64>,
    input: Vec<f64>,
    cost: f64,
    converged: bool,
}

impl From<(&Trajectory, f64, bool)> for Plan {
    fn from((traj, cost, converged): (&Trajectory, f64, bool)) -> Self {
        Self {
            position: traj.states.iter().map(|x| x[0]).collect(),
            input: traj.inputs.iter().map(|u| u[0]).collect(),
            cost,
            converged,
        }
    }
}

#[derive(Serialize)]
struct Comparison {
    u_max: f64,
    p_max: f64,
    /// Barrier pair the safe plan ended at after restoration.
    alpha: f64,
    beta: f64,
    safe: Plan,
    unconstrained: Plan,
}

/// Halvings of `(alpha, beta)` tried until the barrier plan is strictly feasible.
const MAX_TIGHTENINGS: usize = 8;

/// Cart-pole swing-up solved with the barrier and without constraints, for
/// the given input and track limits. The barrier starts at `(alpha, beta)`
/// and is halved while its plan still touches a limit.
#[wasm_bindgen]
pub fn compare_cartpole(u_max: f64, p_max: f64, alpha: f64, beta: f64) -> Result<String, JsError> {
    let problem = CartpoleSpec::default().build_problem().map_err(js)?;
    let theta = problem.spec.true_theta().with_cstr(&[u_max, p_max]).map_err(js)?;
    let settings = SolverSettings {
        max_iterations: 400,
        ..SolverSettings::default()
    };
    let free = solve(&AugmentedProblem::unconstrained(&problem), &theta, None, &settings).map_err(js)?;
    let mut cfg = BarrierConfig::new(alpha, beta).map_err(js)?;
    let mut safe = solve(&augment(&problem, cfg), &theta, None, &settings).map_err(js)?;
    for _ in 0..MAX_TIGHTENINGS {
        let worst = evaluate_constraints(&problem, &safe.trajectory, &theta).map_err(js)?.max_inequality();
        if worst < 0.0 {
            break;
        }
        cfg = cfg.scaled(0.5).map_err(js)?;
        safe = solve(&augment(&problem, cfg), &theta, Some(&safe.trajectory), &settings).map_err(js)?;
    }
    to_json(&Comparison {
        u_max,
        p_max,
        alpha: cfg.alpha,
        beta: cfg.beta,
        safe: (&safe.trajectory, safe.final_cost, safe.converged).into(),
        unconstrained: (&free.trajectory, free.final_cost, free.converged).into(),
    })
}

#[derive(Serialize)]
struct Learning {
    loss: Vec<f64>,
    theta_true: Vec<f64>,
    theta_final: Vec<f64>,
    violations: Vec<(String, f64, f64)>,
    aborted: Option<String>,
}

/// A short online run; `mode` is `safe` or `baseline`.
#[wasm_bindgen]
pub fn learn(system: &str, mode: &str, sigma: f64, seed: u64, iterations: usize) -> Result<String, JsError> {
    let system: SystemKind = system.parse().map_err(js)?;
    let mode: Mode = mode.parse().map_err(js)?;
    let cfg = RunConfig {
        mode,
        sigma,
        seed,
        iterations,
        ..RunConfig::for_system(system)
    };
    let log = run_online(&cfg).map_err(js)?;
    to_json(&Learning {
        loss: log.losses(),
        theta_true: log.theta_true.clone(),
        theta_final: log.final_theta().to_vec(),
        violations: log
            .violations
            .families
            .iter()
            .map(|f| (f.name.clone(), f.pct_violation, f.max_violation))
            .collect(),
        aborted: log.aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_hugs_relu() {
        let v: serde_json::Value = serde_json::from_str(&softplus_curve(0.1, 2.0, 41).unwrap()).unwrap();
        let sp = v["softplus"].as_array().unwrap();
        let relu = v["relu"].as_array().unwrap();
        assert_eq!(sp.len(), 41);
        for (a, b) in sp.iter().zip(relu) {
            let gap = a.as_f64().unwrap() - b.as_f64().unwrap();
            assert!((0.0..=0.1 * std::f64::consts::LN_2 + 1e-15).contains(&gap));
        }
    }

    #[test]
    fn safe_plan_respects_tighter_track() {
        let v: serde_json::Value = serde_json::from_str(&compare_cartpole(12.0, 0.8, 0.3, 0.075).unwrap()).unwrap();
        let safe = v["safe"]["position"].as_array().unwrap();
        assert_eq!(safe.len(), 36);
        assert!(safe.iter().all(|p| p.as_f64().unwrap().abs() < 0.8));
        assert!(v["safe"]["cost"].as_f64().unwrap() >= v["unconstrained"]["cost"].as_f64().unwrap() - 1e-9);
    }

    #[test]
    fn learning_reports_losses() {
        let v: serde_json::Value = serde_json::from_str(&learn("lqr-toy", "safe", 0.0, 0, 10).unwrap()).unwrap();
        assert_eq!(v["loss"].as_array().unwrap().len(), 10);
        assert!(v["aborted"].is_null());
    }
}
