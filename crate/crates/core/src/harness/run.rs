use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{Mode, RunConfig};
use super::metrics::{violation_metrics, ViolationReport};
use crate::barrier::{augment, AugmentedProblem, BarrierConfig};
use crate::clock::Stopwatch;
use crate::error::{Result, SocilError};
use crate::estimator::{cumulative_loss, ekf_step, stage_jacobian, stage_loss, EstimatorState, MeasurementModel};
use crate::ocp::{evaluate_constraints, ControlProblem, ParamVector, Trajectory};
use crate::pdp::{assemble_derivs, pdp_jacobian};
use crate::systems::{measure, NoiseConfig, SystemKind};
use crate::trajopt::{solve, Solution, SolverSettings};

/// RNG stream for the initial-guess draw; noise uses streams `0..=T`.
const INIT_STREAM: u64 = u64::MAX;

/// Smallest squared magnitude used when scaling the prior by `θ̂_0`.
const PRIOR_FLOOR: f64 = 1e-6;

/// Iteration floor for each continuation stage of the demonstration solve.
const DEMO_MIN_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub trajectory: Trajectory,
    /// `y*_t` for `t = 0..=T`.
    pub measurements: Vec<DVector<f64>>,
    pub model: MeasurementModel,
    pub theta_true: ParamVector,
    /// Largest true inequality value along the demonstration (strictly negative).
    pub max_inequality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Replay index into the demonstration.
    pub stage: usize,
    /// `L(ξ(θ̂))` of the trajectory solved in this iteration.
    pub loss: f64,
    /// Estimate after this iteration's update.
    pub theta: Vec<f64>,
    pub ms_total: f64,
    pub ms_gradient: f64,
    pub stationarity: f64,
    pub solver_iterations: usize,
    /// Factor applied to (α, β) after feasibility restoration.
    pub barrier_scale: f64,
    pub degraded: bool,
    pub violations: ViolationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub theta_true: Vec<f64>,
    pub theta_init: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// Aggregate over every executed trajectory of the run.
    pub violations: ViolationReport,
    pub final_trajectory: Option<Trajectory>,
    /// Reason the loop stopped early, if it did.
    pub aborted: Option<String>,
}

impl RunLog {
    pub fn final_theta(&self) -> &[f64] {
        self.records.last().map_or(&self.theta_init, |r| &r.theta)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

fn resolve_theta(default: ParamVector, over: &Option<Vec<f64>>) -> Result<ParamVector> {
    match over {
        Some(v) => ParamVector::new(default.layout(), v.clone()),
        None => Ok(default),
    }
}

/// Solve the demonstration system and synthesize its measurement stream.
pub fn generate_demonstration(config: &RunConfig) -> Result<Demonstration> {
    config.validate()?;
    match config.system {
        SystemKind::Cartpole => {
            let p = config.cartpole.build_problem()?;
            demonstrate(&p, resolve_theta(config.cartpole.true_theta(), &config.theta_true)?, config)
        }
        SystemKind::Arm => {
            let p = config.arm.build_problem()?;
            demonstrate(&p, resolve_theta(config.arm.true_theta(), &config.theta_true)?, config)
        }
        SystemKind::LqrToy => {
            let p = config.lqr_toy.build_problem()?;
            demonstrate(&p, resolve_theta(config.lqr_toy.true_theta(), &config.theta_true)?, config)
        }
    }
}

/// Execute the online learning loop.
///
/// Errors before the loop starts are returned as `Err`; a failure inside the
/// loop ends it early and is recorded in [`RunLog::aborted`].
pub fn run_online(config: &RunConfig) -> Result<RunLog> {
    config.validate()?;
    match config.system {
        SystemKind::Cartpole => {
            let p = config.cartpole.build_problem()?;
            run_problem(&p, resolve_theta(config.cartpole.true_theta(), &config.theta_true)?, config)
        }
        SystemKind::Arm => {
            let p = config.arm.build_problem()?;
            run_problem(&p, resolve_theta(config.arm.true_theta(), &config.theta_true)?, config)
        }
        SystemKind::LqrToy => {
            let p = config.lqr_toy.build_problem()?;
            run_problem(&p, resolve_theta(config.lqr_toy.true_theta(), &config.theta_true)?, config)
        }
    }
}

/// Independent trials with seeds `config.seed + k`.
pub fn sweep(config: &RunConfig, trials: usize) -> Vec<(u64, Result<RunLog>)> {
    let one = |k: usize| {
        let seed = config.seed.wrapping_add(k as u64);
        let cfg = RunConfig {
            seed,
            ..config.clone()
        };
        (seed, run_online(&cfg))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(one).collect()
    }
}

/// Solver settings for the demonstration: at least as strict as the run's.
fn demo_settings(settings: &SolverSettings) -> SolverSettings {
    SolverSettings {
        max_iterations: settings.max_iterations.max(DEMO_MIN_ITERATIONS),
        ..*settings
    }
}

/// Solve at `base`, then halve the barrier stage by stage down to
/// `base / tightening`, warm-starting each stage. A cold solve at a tight
/// barrier alone tends to stall on the cart-pole swing-up.
pub fn continuation_solve<P: ControlProblem>(
    problem: &P,
    theta: &ParamVector,
    base: BarrierConfig,
    tightening: f64,
    settings: &SolverSettings,
) -> Result<Solution> {
    let stages = tightening.log2().ceil().max(0.0) as i32;
    let mut warm: Option<Trajectory> = None;
    let mut last = None;
    for k in 0..=stages {
        let factor = if stages == 0 {
            1.0
        } else {
            tightening.powf(-f64::from(k) / f64::from(stages))
        };
        let aug = augment(problem, base.scaled(factor)?);
        let sol = solve(&aug, theta, warm.as_ref(), settings)?;
        warm = Some(sol.trajectory.clone());
        last = Some(sol);
    }
    Ok(last.expect("at least one continuation stage"))
}

fn demonstrate<P: ControlProblem>(problem: &P, theta_true: ParamVector, config: &RunConfig) -> Result<Demonstration> {
    problem.check_validity(problem.initial_state().as_slice(), theta_true.as_slice())?;
    let settings = demo_settings(&config.solver);
    let base = BarrierConfig::new(config.alpha, config.beta)?;
    let sol = continuation_solve(problem, &theta_true, base, config.demo_tightening, &settings)?;
    if !sol.converged {
        return Err(SocilError::Solver(format!(
            "demonstration solve stopped at stationarity {:.3e} after {} iterations",
            sol.stationarity, sol.iterations
        )));
    }
    let values = evaluate_constraints(problem, &sol.trajectory, &theta_true)?;
    let max_inequality = values.max_inequality();
    let max_eq = values
        .path_eq
        .iter()
        .chain(std::iter::once(&values.term_eq))
        .flat_map(|h| h.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    if max_inequality >= 0.0 || max_eq > 1e-6 {
        return Err(SocilError::Infeasible(format!(
            "demonstration reaches g = {max_inequality:.3e}, |h| = {max_eq:.3e}"
        )));
    }
    let d = problem.dims();
    let model = MeasurementModel::state_identity(d.state_dim, d.input_dim, config.measurement_variance())?;
    let noise = NoiseConfig::new(config.sigma, config.seed)?;
    let measurements = (0..=d.horizon)
        .map(|t| measure(&sol.trajectory.stage(t), &model, &noise, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Demonstration {
        trajectory: sol.trajectory,
        measurements,
        model,
        theta_true,
        max_inequality,
    })
}

/// `θ̂_0 = θ*(1 + δ)` with `δ` uniform per partition; constraint bounds may
/// only shrink when the perturbation is conservative.
pub fn initial_guess(theta_true: &ParamVector, config: &RunConfig) -> Result<ParamVector> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let layout = theta_true.layout();
    let pert = &config.perturbation;
    let mut draw = |spread: f64, conservative: bool| -> f64 {
        // always consume one draw so partitions stay aligned across settings
        let r: f64 = rng.random_range(-1.0..=1.0);
        if conservative {
            -spread * r.abs()
        } else {
            spread * r
        }
    };
    let values: Vec<f64> = theta_true
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let delta = if layout.dyn_range().contains(&i) {
                draw(pert.dyn_params, false)
            } else if layout.obj_range().contains(&i) {
                draw(pert.obj_params, false)
            } else {
                draw(pert.cstr_params, pert.cstr_conservative)
            };
            v * (1.0 + delta)
        })
        .collect();
    ParamVector::new(layout, values)
}

fn barrier_at(config: &RunConfig, iter: usize) -> Result<BarrierConfig> {
    let base = BarrierConfig::new(config.alpha, config.beta)?;
    if config.barrier_decay == 1.0 {
        return Ok(base);
    }
    let factor = config
        .barrier_decay
        .powi(iter as i32)
        .max(1.0 / config.demo_tightening);
    base.scaled(factor)
}

/// Clamp each constraint bound to at most `cap`, so a barrier-feasible plan
/// under the estimate stays feasible under any bounds at least that loose.
fn project_bounds(theta: &ParamVector, cap: &[f64]) -> Result<ParamVector> {
    let cstr: Vec<f64> = theta.cstr_params().iter().zip(cap).map(|(v, c)| v.min(*c)).collect();
    theta.with_cstr(&cstr)
}

fn run_problem<P: ControlProblem>(problem: &P, theta_true: ParamVector, config: &RunConfig) -> Result<RunLog> {
    let demo = demonstrate(problem, theta_true.clone(), config)?;
    let theta0 = initial_guess(&theta_true, config)?;
    let mut log = RunLog {
        config: config.clone(),
        theta_true: theta_true.as_slice().to_vec(),
        theta_init: theta0.as_slice().to_vec(),
        records: Vec::with_capacity(config.iterations),
        violations: ViolationReport::default(),
        final_trajectory: None,
        aborted: None,
    };
    let prior = DMatrix::from_diagonal(&theta0.values().map(|v| config.p0 * (v * v).max(PRIOR_FLOOR)));
    let bound_cap = theta0.cstr_params().to_vec();
    let mut state = EstimatorState::with_covariance(theta0, prior)?;
    let mut warm: Option<Trajectory> = None;
    let provider = config.solver.provider();
    let replay = demo.measurements.len();
    let true_cstr = theta_true.cstr_params().to_vec();
    let mut reports = Vec::with_capacity(config.iterations);

    // persistent barrier scale from feasibility restoration
    let mut scale = 1.0;

    for iter in 0..config.iterations {
        let stage = iter % replay;
        let step = (|| -> Result<(IterationRecord, EstimatorState, Trajectory, f64)> {
            let theta = &state.theta_hat;
            let total = Stopwatch::start();
            let (aug, sol, used_scale) = match config.mode {
                Mode::SafeOcil => {
                    let base = barrier_at(config, iter)?;
                    let mut scale = scale;
                    let mut aug = augment(problem, base.scaled(scale)?);
                    let mut sol = solve(&aug, theta, warm.as_ref(), &config.solver)?;
                    let mut tightenings = 0;
                    while tightenings < config.max_tightenings
                        && evaluate_constraints(problem, &sol.trajectory, theta)?.max_inequality() >= 0.0
                    {
                        tightenings += 1;
                        scale *= 0.5;
                        aug = augment(problem, base.scaled(scale)?);
                        sol = solve(&aug, theta, Some(&sol.trajectory), &config.solver)?;
                    }
                    (aug, sol, scale)
                }
                Mode::OcilBaseline => {
                    let aug = AugmentedProblem::unconstrained(problem);
                    let sol = solve(&aug, theta, warm.as_ref(), &config.solver)?;
                    (aug, sol, 1.0)
                }
            };
            let grad = Stopwatch::start();
            let derivs = assemble_derivs(&aug, &sol, theta, &provider)?;
            let jac = pdp_jacobian(&derivs)?;
            let l_t = stage_jacobian(stage, &jac, &demo.model)?;
            let ms_gradient = grad.elapsed_ms();
            let innovation = stage_loss(&sol.trajectory.stage(stage), &demo.measurements[stage], &demo.model)?;
            let degraded = !sol.converged;
            let next = if degraded && config.skip_degraded {
                EstimatorState {
                    step: state.step + 1,
                    ..state.clone()
                }
            } else {
                let mut next = ekf_step(&state, &l_t, &innovation, &demo.model, degraded)?.0;
                if config.bound_projection && config.mode == Mode::SafeOcil {
                    next.theta_hat = project_bounds(&next.theta_hat, &bound_cap)?;
                }
                next
            };
            let ms_total = total.elapsed_ms();
            let loss = cumulative_loss(&sol.trajectory, &demo.measurements, &demo.model)?;
            let violations = violation_metrics(&sol.trajectory, problem, theta, &true_cstr)?;
            let record = IterationRecord {
                iter,
                stage,
                loss,
                theta: next.theta_hat.as_slice().to_vec(),
                ms_total,
                ms_gradient,
                stationarity: sol.stationarity,
                solver_iterations: sol.iterations,
                barrier_scale: used_scale,
                degraded,
                violations,
            };
            Ok((record, next, sol.trajectory, used_scale))
        })();
        match step {
            Ok((record, next, traj, used_scale)) => {
                scale = used_scale;
                reports.push(record.violations.clone());
                log.records.push(record);
                state = next;
                warm = Some(traj);
            }
            Err(e) => {
                log.aborted = Some(format!("iteration {iter}: {e}"));
                break;
            }
        }
    }
    log.violations = ViolationReport::aggregate(&reports);
    log.final_trajectory = warm;
    Ok(log)
}
