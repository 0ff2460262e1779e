//! Frictionless cart-pole swing-up.
//!
//! State `[p, q, ṗ, q̇]` with `q = 0` hanging down and `q = π` upright. The
//! parameter vector is `[m_c, m_p, l | w_p, w_q, w_ṗ, w_q̇ | u_max, p_max]`.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_positive, rk4};
use crate::error::{Result, SocilError};
use crate::ocp::{ConstraintFamily, ControlProblem, Dims, ParamLayout, ParamVector, Scalar};

/// Box on state and rates outside which the model refuses to evaluate.
const POSITION_LIMIT: f64 = 50.0;
const RATE_LIMIT: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartpoleSpec {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub weights: [f64; 4],
    pub input_weight: f64,
    pub u_max: f64,
    pub p_max: f64,
    pub x0: [f64; 4],
    pub x_goal: [f64; 4],
    pub dt: f64,
    pub horizon: usize,
}

impl Default for CartpoleSpec {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            weights: [0.3, 0.6, 0.1, 0.1],
            input_weight: 0.01,
            u_max: 12.0,
            p_max: 0.8,
            x0: [0.0, 0.0, 0.0, 0.0],
            x_goal: [0.0, PI, 0.0, 0.0],
            dt: 0.1,
            horizon: 35,
        }
    }
}

impl CartpoleSpec {
    pub fn validate(&self) -> Result<()> {
        check_positive("cart mass", self.cart_mass)?;
        check_positive("pole mass", self.pole_mass)?;
        check_positive("pole length", self.pole_length)?;
        check_positive("time step", self.dt)?;
        check_positive("input bound", self.u_max)?;
        check_positive("position bound", self.p_max)?;
        if self.input_weight < 0.0 || !self.gravity.is_finite() {
            return Err(SocilError::Config("cart-pole gravity and input weight must be finite, weight >= 0".into()));
        }
        if self.horizon == 0 {
            return Err(SocilError::Config("horizon must be at least 1".into()));
        }
        if self.x_goal[0].abs() >= self.p_max || self.x0[0].abs() >= self.p_max {
            return Err(SocilError::Config("cart-pole start and goal must lie strictly inside the position box".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Cartpole> {
        self.validate()?;
        Ok(Cartpole { spec: self.clone() })
    }

    pub fn true_theta(&self) -> ParamVector {
        ParamVector::from_parts(
            &[self.cart_mass, self.pole_mass, self.pole_length],
            &self.weights,
            &[self.u_max, self.p_max],
        )
        .expect("finite cart-pole parameters")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cartpole {
    pub spec: CartpoleSpec,
}

impl Cartpole {
    /// Continuous-time state derivative for `θ_dyn = [m_c, m_p, l]`.
    pub fn derivative<D: Scalar>(&self, x: &[D], u: &[D], theta_dyn: &[D]) -> Vec<D> {
        let (mc, mp, l) = (theta_dyn[0], theta_dyn[1], theta_dyn[2]);
        let g = self.spec.gravity;
        let (s, c) = (x[1].sin(), x[1].cos());
        let qd = x[3];
        let denom = mc + mp * s * s;
        let p_acc = (u[0] + mp * s * (l * qd * qd + c * g)) / denom;
        let q_acc = (-(u[0] * c) - mp * l * qd * qd * c * s - (mc + mp) * s * g) / (l * denom);
        vec![x[2], x[3], p_acc, q_acc]
    }

    /// Total mechanical energy with the pivot height as zero potential.
    pub fn energy(&self, x: &[f64], theta_dyn: &[f64]) -> f64 {
        let (mc, mp, l) = (theta_dyn[0], theta_dyn[1], theta_dyn[2]);
        let (pd, qd) = (x[2], x[3]);
        0.5 * (mc + mp) * pd * pd + mp * pd * l * qd * x[1].cos() + 0.5 * mp * l * l * qd * qd
            - mp * self.spec.gravity * l * x[1].cos()
    }
}

impl ControlProblem for Cartpole {
    fn dims(&self) -> Dims {
        Dims {
            state_dim: 4,
            input_dim: 1,
            horizon: self.spec.horizon,
            path_ineq: 4,
            path_eq: 0,
            term_ineq: 2,
            term_eq: 0,
        }
    }

    fn param_layout(&self) -> ParamLayout {
        ParamLayout::new(3, 4, 2)
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.spec.x0)
    }

    fn dynamics<D: Scalar>(&self, x: &[D], u: &[D], theta: &[D]) -> Vec<D> {
        rk4(|x, u, th| self.derivative(x, u, th), x, u, &theta[..3], self.spec.dt)
    }

    fn stage_cost<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], theta: &[D]) -> D {
        let mut c = u[0] * u[0] * self.spec.input_weight;
        for i in 0..4 {
            let e = theta[3 + i] * (x[i] - self.spec.x_goal[i]);
            c += e * e;
        }
        c
    }

    fn terminal_cost<D: Scalar>(&self, x: &[D], theta: &[D]) -> D {
        let mut c = D::zero();
        for i in 0..4 {
            let e = theta[3 + i] * (x[i] - self.spec.x_goal[i]);
            c += e * e;
        }
        c
    }

    /// `[p - p_max, -p - p_max, u - u_max, -u - u_max]`
    fn path_inequality<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], theta: &[D]) -> Vec<D> {
        let (u_max, p_max) = (theta[7], theta[8]);
        vec![x[0] - p_max, -x[0] - p_max, u[0] - u_max, -u[0] - u_max]
    }

    fn terminal_inequality<D: Scalar>(&self, x: &[D], theta: &[D]) -> Vec<D> {
        let p_max = theta[8];
        vec![x[0] - p_max, -x[0] - p_max]
    }

    fn check_validity(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x[0].abs() > POSITION_LIMIT || x[2].abs() > RATE_LIMIT || x[3].abs() > RATE_LIMIT {
            return Err(SocilError::Validity(format!("cart-pole state {x:?} outside the validity box")));
        }
        if theta[..3].iter().any(|&v| v <= 0.0) {
            return Err(SocilError::Validity(format!(
                "cart-pole physical parameters {:?} must be positive",
                &theta[..3]
            )));
        }
        Ok(())
    }

    fn constraint_families(&self) -> Vec<ConstraintFamily> {
        vec![
            ConstraintFamily {
                name: "u".into(),
                path: vec![2, 3],
                terminal: vec![],
                bound_param: 0,
            },
            ConstraintFamily {
                name: "p".into(),
                path: vec![0, 1],
                terminal: vec![0, 1],
                bound_param: 1,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::provider_disagreement;
    use crate::ocp::rollout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cartpole() -> Cartpole {
        CartpoleSpec::default().build_problem().unwrap()
    }

    #[test]
    fn upright_equilibrium_is_still() {
        let cp = cartpole();
        let th = [1.0, 0.1, 0.5];
        let d = cp.derivative(&[0.2, PI, 0.0, 0.0], &[0.0], &th);
        for v in d {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn free_motion_conserves_energy() {
        let spec = CartpoleSpec {
            dt: 0.02,
            horizon: 50,
            x0: [0.0, 1.0, 0.3, 0.0],
            ..CartpoleSpec::default()
        };
        let cp = spec.build_problem().unwrap();
        let theta = spec.true_theta();
        let traj = rollout(&cp, &theta, &vec![DVector::zeros(1); 50]).unwrap();
        let th = theta.dyn_params();
        // shift so the reference energy is well away from zero
        let offset = 2.0 * spec.pole_mass * spec.gravity * spec.pole_length;
        let e0 = cp.energy(traj.states[0].as_slice(), th) + offset;
        for x in &traj.states {
            let e = cp.energy(x.as_slice(), th) + offset;
            assert!(((e - e0) / e0).abs() <= 1e-4, "drift {}", (e - e0) / e0);
        }
    }

    #[test]
    fn goal_cost_is_zero_and_constraints_counted() {
        let cp = cartpole();
        let theta = cp.spec.true_theta();
        let c: f64 = cp.stage_cost(0, &cp.spec.x_goal, &[0.0], theta.as_slice());
        assert_eq!(c, 0.0);
        assert_eq!(cp.dims().path_ineq, 4);
        assert_eq!(cp.dims().path_eq, 0);
        let g: Vec<f64> = cp.path_inequality(0, &[0.5, 0.0, 0.0, 0.0], &[0.0], theta.as_slice());
        assert!((g[0] + 0.3).abs() < 1e-15 && (g[1] + 1.3).abs() < 1e-15);
        let g: Vec<f64> = cp.path_inequality(0, &[0.8, 0.0, 0.0, 0.0], &[0.0], theta.as_slice());
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn goal_is_strictly_inside_the_box() {
        let spec = CartpoleSpec::default();
        assert!(spec.x_goal[0].abs() < spec.p_max);
    }

    #[test]
    fn derivative_modes_agree_at_random_points() {
        let cp = cartpole();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: Vec<f64> = vec![
                rng.random_range(-0.8..0.8),
                rng.random_range(-PI..2.0 * PI),
                rng.random_range(-3.0..3.0),
                rng.random_range(-8.0..8.0),
            ];
            let u = [rng.random_range(-12.0..12.0)];
            let theta: Vec<f64> = cp
                .spec
                .true_theta()
                .as_slice()
                .iter()
                .map(|v| v * rng.random_range(0.8..1.2))
                .collect();
            let err = provider_disagreement(&cp, 0, &x, &u, &theta);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn validity_box_rejects_divergence() {
        let cp = cartpole();
        let theta = cp.spec.true_theta();
        assert!(cp.check_validity(&[60.0, 0.0, 0.0, 0.0], theta.as_slice()).is_err());
        assert!(cp.check_validity(&[0.0, 0.0, 0.0, 0.0], &[0.0; 9]).is_err());
    }
}
