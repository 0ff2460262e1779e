//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its PASS/FAIL line; exits non-zero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use socil_core::barrier::{approximate_multipliers, augment, softplus, BarrierConfig};
use socil_core::estimator::{ekf_step, EstimatorState, MeasurementModel};
use socil_core::harness::validate::{ekf_random_walk, gradient_error};
use socil_core::harness::{generate_demonstration, sweep, windowed_median, Mode, RunConfig, RunLog};
use socil_core::ocp::{evaluate_constraints, ParamLayout, ParamVector};
use socil_core::pdp::{assemble_derivs, pdp_jacobian};
use socil_core::systems::{ArmSpec, CartpoleSpec, LqrToy, SystemKind};
use socil_core::trajopt::{solve, SolverSettings};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn trials(system: SystemKind, mode: Mode, sigma: f64, n: usize) -> Vec<RunLog> {
    let cfg = RunConfig {
        mode,
        sigma,
        ..RunConfig::for_system(system)
    };
    sweep(&cfg, n)
        .into_iter()
        .map(|(seed, r)| {
            let log = r.unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(log.aborted.is_none(), "seed {seed}: {:?}", log.aborted);
            log
        })
        .collect()
}

fn family_positive(log: &RunLog, name: &str) -> bool {
    log.violations
        .family(name)
        .is_some_and(|f| f.pct_violation > 0.0 && f.max_violation > 0.0)
}

fn safety() -> Outcome {
    let mut unsafe_runs = Vec::new();
    for sigma in [0.0, 0.3, 0.6] {
        for (k, log) in trials(SystemKind::Cartpole, Mode::SafeOcil, sigma, 10).iter().enumerate() {
            for f in &log.violations.families {
                if f.pct_violation != 0.0 || f.max_violation != 0.0 {
                    unsafe_runs.push(format!(
                        "σ={sigma} seed {k} {} {:.1}%/{:.1}%",
                        f.name, f.pct_violation, f.max_violation
                    ));
                }
            }
        }
    }
    let detail = if unsafe_runs.is_empty() {
        "30 safe cart-pole runs, u and p never violated".to_string()
    } else {
        unsafe_runs.join("; ")
    };
    outcome(unsafe_runs.is_empty(), detail)
}

fn baseline_contrast() -> Outcome {
    let logs = trials(SystemKind::Cartpole, Mode::OcilBaseline, 0.3, 10);
    let both = logs
        .iter()
        .filter(|l| family_positive(l, "u") && family_positive(l, "p"))
        .count();
    outcome(both >= 8, format!("{both}/10 baseline runs violate both u and p"))
}

fn gradients() -> Outcome {
    // ∂u_0/∂θ = −x_0/(1 + θ)² for the one-step toy
    let theta = 1.0;
    let toy = LqrToy::new(1, 1.0);
    let th = toy.true_theta(theta);
    let aug = socil_core::barrier::AugmentedProblem::unconstrained(&toy);
    let settings = SolverSettings::tight();
    let sol = solve(&aug, &th, None, &settings).unwrap();
    let jac = pdp_jacobian(&assemble_derivs(&aug, &sol, &th, &settings.provider()).unwrap()).unwrap();
    let closed = (jac.inputs[0][(0, 0)] + 1.0 / ((1.0 + theta) * (1.0 + theta))).abs();

    let bounded = LqrToy::new(5, 1.0).with_input_bound(0.3);
    let cart = CartpoleSpec::default().build_problem().unwrap();
    let arm = ArmSpec::default().build_problem().unwrap();
    let mut worst = 0.0f64;
    for (alpha, beta) in [(0.3, 0.075), (0.08, 0.02)] {
        worst = worst
            .max(gradient_error(&bounded, &bounded.true_theta(1.0), alpha, beta).unwrap())
            .max(gradient_error(&cart, &cart.spec.true_theta(), alpha, beta).unwrap())
            .max(gradient_error(&arm, &arm.spec.true_theta(), alpha, beta).unwrap());
    }
    outcome(
        closed <= 1e-6 && worst <= 1e-3,
        format!("closed-form error {closed:.1e}, worst PDP vs FD relative error {worst:.1e}"),
    )
}

fn barrier_limit() -> Outcome {
    let mut gap = 0.0f64;
    for beta in [1e-3, 0.02, 0.075, 0.3, 1.0] {
        for k in -300..=300 {
            let x = f64::from(k) * beta / 25.0;
            gap = gap.max((softplus(x, beta).unwrap() - x.max(0.0)).abs() - beta * std::f64::consts::LN_2);
        }
    }
    // one-step toy: unconstrained optimum u = −0.5 is clamped to u = −0.3, x_1 = 0.7
    let toy = LqrToy::new(1, 1.0).with_input_bound(0.3);
    let th = toy.true_theta(1.0);
    let mut cfg = BarrierConfig::new(0.08, 0.02).unwrap();
    let mut errors = Vec::new();
    let mut max_g = f64::NEG_INFINITY;
    for _ in 0..=4 {
        let sol = solve(&augment(&toy, cfg), &th, None, &SolverSettings::tight()).unwrap();
        let err = (sol.trajectory.inputs[0][0] + 0.3)
            .abs()
            .max((sol.trajectory.states[1][0] - 0.7).abs());
        errors.push(err);
        max_g = max_g.max(evaluate_constraints(&toy, &sol.trajectory, &th).unwrap().max_inequality());
        cfg = cfg.scaled(0.5).unwrap();
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    outcome(
        gap <= 1e-15 && monotone && max_g < 0.0,
        format!(
            "softplus gap excess {gap:.1e}, errors {:?}, max g {max_g:.2e}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn estimator() -> Outcome {
    // P = R = L = 1, innovation 1: K = 1/2, P⁺ = 1/2, θ̂⁺ = 2 − 1/2
    let model = MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    let state = EstimatorState::new(ParamVector::from_parts(&[], &[2.0], &[]).unwrap(), 1.0).unwrap();
    let (next, rep) = ekf_step(&state, &DMatrix::identity(1, 1), &DVector::from_element(1, 1.0), &model, false).unwrap();
    let scalar = [
        rep.kalman_gain[(0, 0)] - 0.5,
        next.cov[(0, 0)] - 0.5,
        next.theta_hat.as_slice()[0] - 1.5,
    ]
    .iter()
    .fold(0.0f64, |a, v| a.max(v.abs()));
    // P = I₂, L = [1 2], R = 1: S = 6, K = [1 2]ᵀ/6, P⁺ = I − KL
    let state = EstimatorState::new(ParamVector::new(ParamLayout::new(1, 1, 0), vec![0.0, 0.0]).unwrap(), 1.0).unwrap();
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let (next, rep) = ekf_step(&state, &l, &DVector::from_element(1, 0.6), &model, false).unwrap();
    let k = DMatrix::from_row_slice(2, 1, &[1.0 / 6.0, 2.0 / 6.0]);
    let p = DMatrix::identity(2, 2) - &k * &l;
    let th = -&k * 0.6;
    let two = (rep.kalman_gain - &k)
        .amax()
        .max((next.cov - p).amax())
        .max((next.theta_hat.values() - th.column(0)).amax());
    let (joseph, spd) = ekf_random_walk(1000, 11).unwrap();
    outcome(
        scalar <= 1e-12 && two <= 1e-12 && spd && joseph <= 1e-8,
        format!("scalar {scalar:.1e}, 2x1 {two:.1e}, SPD over 1000 steps {spd}, Joseph {joseph:.1e}"),
    )
}

fn convergence(cart_noiseless: &RunLog) -> Outcome {
    let toy = trials(SystemKind::LqrToy, Mode::SafeOcil, 0.0, 1).remove(0);
    let toy_err = (toy.final_theta()[0] - toy.theta_true[0]).abs();
    let losses = cart_noiseless.losses();
    let tail = *windowed_median(&losses, 20).last().unwrap();
    let ratio = tail / losses[0];
    outcome(
        toy.records.len() <= 200 && toy_err <= 1e-3 && ratio < 0.05,
        format!(
            "toy |θ̂−θ*| {toy_err:.1e} after {} iterations, cart-pole loss {:.1} -> {tail:.2} ({:.1}%)",
            toy.records.len(),
            losses[0],
            100.0 * ratio
        ),
    )
}

fn latency(cart: &[RunLog]) -> Outcome {
    let arm = trials(SystemKind::Arm, Mode::SafeOcil, 0.0, 1).remove(0);
    let collect = |logs: &[RunLog], f: fn(&socil_core::harness::IterationRecord) -> f64| -> Vec<f64> {
        logs.iter().flat_map(|l| l.records.iter().map(f)).collect()
    };
    let cart_total = median(&collect(cart, |r| r.ms_total));
    let cart_grad = median(&collect(cart, |r| r.ms_gradient));
    let arm_logs = [arm];
    let arm_total = median(&collect(&arm_logs, |r| r.ms_total));
    let arm_grad = median(&collect(&arm_logs, |r| r.ms_gradient));
    outcome(
        cart_total < 100.0 && arm_total < 200.0 && cart_grad < 20.0 && arm_grad < 20.0,
        format!(
            "median ms: cart-pole {cart_total:.1} (gradient {cart_grad:.1}), arm {arm_total:.1} (gradient {arm_grad:.1})"
        ),
    )
}

fn multipliers() -> Outcome {
    let cfg = RunConfig::for_system(SystemKind::Cartpole);
    let demo = generate_demonstration(&cfg).unwrap();
    let problem = CartpoleSpec::default().build_problem().unwrap();
    let barrier = BarrierConfig::new(cfg.alpha, cfg.beta)
        .unwrap()
        .scaled(1.0 / cfg.demo_tightening)
        .unwrap();
    let values = evaluate_constraints(&problem, &demo.trajectory, &demo.theta_true).unwrap();
    let mu = approximate_multipliers(&problem, &demo.trajectory, &demo.theta_true, &barrier).unwrap();
    let pairs: Vec<(f64, f64)> = values
        .path_ineq
        .iter()
        .zip(&mu.path_ineq)
        .chain(std::iter::once((&values.term_ineq, &mu.term_ineq)))
        .flat_map(|(g, m)| g.iter().copied().zip(m.iter().copied()).collect::<Vec<_>>())
        .collect();
    let a = barrier.alpha;
    let inactive_max = pairs
        .iter()
        .filter(|(g, _)| *g < -0.1)
        .map(|(_, m)| *m)
        .fold(0.0, f64::max);
    let (g_active, mu_active) = pairs.iter().copied().max_by(|x, y| x.0.total_cmp(&y.0)).unwrap();
    let passed = inactive_max < 1e-3 / a && mu_active > 0.0 && mu_active <= 1.0 / (2.0 * a);
    outcome(
        passed,
        format!(
            "(α, β) = ({a:.3}, {:.4}): max μ·α over g < −0.1 is {:.1e}; most active g = {g_active:.2e}, μ·α = {:.3}",
            barrier.beta,
            inactive_max * a,
            mu_active * a
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, o: Outcome| {
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {n} {name}: {} [{:.1} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };

    let t = Instant::now();
    report(1, "safety", t, safety());
    let t = Instant::now();
    report(2, "baseline contrast", t, baseline_contrast());
    let t = Instant::now();
    report(3, "gradient validity", t, gradients());
    let t = Instant::now();
    report(4, "barrier limit", t, barrier_limit());
    let t = Instant::now();
    report(5, "estimator", t, estimator());
    let t = Instant::now();
    let cart = trials(SystemKind::Cartpole, Mode::SafeOcil, 0.0, 1);
    report(6, "convergence", t, convergence(&cart[0]));
    let t = Instant::now();
    report(7, "latency", t, latency(&cart));
    let t = Instant::now();
    report(8, "multipliers", t, multipliers());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
