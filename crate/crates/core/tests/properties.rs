use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use socil_core::barrier::{softplus, softplus_grad};
use socil_core::estimator::{ekf_step, EstimatorState, MeasurementModel};
use socil_core::ocp::{rollout, ParamLayout, ParamVector};
use socil_core::systems::{CartpoleSpec, NoiseConfig};

fn spd(n: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

fn theta(values: Vec<f64>) -> ParamVector {
    let n = values.len();
    ParamVector::new(ParamLayout::new(n, 0, 0), values).unwrap()
}

proptest! {
    #[test]
    fn softplus_within_beta_ln2_of_relu(x in -50.0f64..50.0, beta in 1e-3f64..10.0) {
        let gap = softplus(x, beta).unwrap() - x.max(0.0);
        prop_assert!(gap >= 0.0);
        prop_assert!(gap <= beta * std::f64::consts::LN_2 * (1.0 + 1e-12));
    }

    #[test]
    fn softplus_is_convex_and_increasing(a in -20.0f64..20.0, b in -20.0f64..20.0, beta in 1e-2f64..5.0) {
        let mid = softplus(0.5 * (a + b), beta).unwrap();
        let chord = 0.5 * (softplus(a, beta).unwrap() + softplus(b, beta).unwrap());
        prop_assert!(mid <= chord + 1e-12 * chord.abs().max(1.0));
        let g = softplus_grad(a, beta).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        if a < b {
            prop_assert!(softplus(a, beta).unwrap() <= softplus(b, beta).unwrap());
        }
    }

    #[test]
    fn ekf_update_properties(
        p_entries in prop::collection::vec(-1.0f64..1.0, 9),
        r_entries in prop::collection::vec(-1.0f64..1.0, 4),
        l_entries in prop::collection::vec(-3.0f64..3.0, 6),
        innov in prop::collection::vec(-2.0f64..2.0, 2),
        th in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let cov = spd(3, &p_entries, 0.1);
        let noise = spd(2, &r_entries, 0.05);
        let model = MeasurementModel::new(DMatrix::identity(2, 2), noise.clone()).unwrap();
        let state = EstimatorState::with_covariance(theta(th.clone()), cov.clone()).unwrap();
        let l = DMatrix::from_column_slice(2, 3, &l_entries);
        let (next, rep) = ekf_step(&state, &l, &DVector::from_vec(innov), &model, false).unwrap();

        // symmetric positive definite
        prop_assert_eq!(&next.cov, &next.cov.transpose());
        prop_assert!(next.cov.clone().cholesky().is_some());
        // information never decreases
        prop_assert!(next.cov.trace() <= cov.trace() * (1.0 + 1e-12));
        // Joseph form
        let ikl = DMatrix::identity(3, 3) - &rep.kalman_gain * &l;
        let joseph = &ikl * &cov * ikl.transpose() + &rep.kalman_gain * &noise * rep.kalman_gain.transpose();
        prop_assert!((&next.cov - joseph).amax() <= 1e-8 * cov.amax());

        // zero innovation leaves the estimate in place
        let (still, _) = ekf_step(&state, &l, &DVector::zeros(2), &model, false).unwrap();
        prop_assert_eq!(still.theta_hat.as_slice(), th.as_slice());
    }

    #[test]
    fn cartpole_rollout_is_reproducible(us in prop::collection::vec(-8.0f64..8.0, 35)) {
        let problem = CartpoleSpec::default().build_problem().unwrap();
        let th = problem.spec.true_theta();
        let inputs: Vec<DVector<f64>> = us.iter().map(|&u| DVector::from_element(1, u)).collect();
        match (rollout(&problem, &th, &inputs), rollout(&problem, &th, &inputs)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "rollout outcome differs between calls"),
        }
    }

    #[test]
    fn noise_streams_are_keyed_by_seed_and_step(seed in any::<u64>(), t in 0u64..1000, sigma in 0.01f64..2.0) {
        let noise = NoiseConfig::new(sigma, seed).unwrap();
        prop_assert_eq!(noise.sample(t, 4), noise.sample(t, 4));
        prop_assert_ne!(noise.sample(t, 4), noise.sample(t + 1, 4));
    }
}
