//! Two-link planar manipulator with point masses at the link ends.
//!
//! State `[q1, q̇1, q2, q̇2]`, joint angles measured from the horizontal, and
//! parameters `[m1, m2, l1, l2 | w_q1, w_q̇1, w_q2, w_q̇2 | u_max, q_max]`.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{check_positive, rk4};
use crate::error::{Result, SocilError};
use crate::ocp::{ConstraintFamily, ControlProblem, Dims, ParamLayout, ParamVector, Scalar};

const ANGLE_LIMIT: f64 = 10.0;
const RATE_LIMIT: f64 = 100.0;
const MIN_MASS_DET: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    /// Gravity acting along −y. Zero models an arm moving in a horizontal plane.
    pub gravity: f64,
    pub weights: [f64; 4],
    pub input_weight: f64,
    pub u_max: f64,
    pub q_max: f64,
    pub x0: [f64; 4],
    pub x_goal: [f64; 4],
    pub dt: f64,
    pub horizon: usize,
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            gravity: 0.0,
            weights: [1.0, 0.3, 1.0, 0.3],
            input_weight: 0.01,
            u_max: 8.0,
            q_max: std::f64::consts::FRAC_PI_2,
            x0: [-0.5, 0.0, 0.5, 0.0],
            x_goal: [1.0, 0.0, -0.8, 0.0],
            dt: 0.2,
            horizon: 25,
        }
    }
}

impl ArmSpec {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("time step", self.dt),
            ("torque bound", self.u_max),
            ("joint bound", self.q_max),
        ] {
            check_positive(what, v)?;
        }
        if self.horizon == 0 {
            return Err(SocilError::Config("horizon must be at least 1".into()));
        }
        let inside = |x: &[f64; 4]| x[0].abs() < self.q_max && x[2].abs() < self.q_max;
        if !inside(&self.x0) || !inside(&self.x_goal) {
            return Err(SocilError::Config("arm start and goal must lie strictly inside the joint box".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<TwoLinkArm> {
        self.validate()?;
        Ok(TwoLinkArm { spec: self.clone() })
    }

    pub fn true_theta(&self) -> ParamVector {
        ParamVector::from_parts(
            &[self.m1, self.m2, self.l1, self.l2],
            &self.weights,
            &[self.u_max, self.q_max],
        )
        .expect("finite arm parameters")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLinkArm {
    pub spec: ArmSpec,
}

/// Entries `(M11, M12, M22)` of the symmetric mass matrix.
fn mass_entries<D: Scalar>(q2: D, th: &[D]) -> (D, D, D) {
    let (m1, m2, l1, l2) = (th[0], th[1], th[2], th[3]);
    let c2 = q2.cos();
    let m22 = m2 * l2 * l2;
    let m12 = m22 + m2 * l1 * l2 * c2;
    let m11 = (m1 + m2) * l1 * l1 + m22 + m2 * l1 * l2 * c2 * 2.0;
    (m11, m12, m22)
}

impl TwoLinkArm {
    /// Gravity torque `G(q)`.
    pub fn gravity_torque<D: Scalar>(&self, q1: D, q2: D, th: &[D]) -> [D; 2] {
        let (m1, m2, l1, l2) = (th[0], th[1], th[2], th[3]);
        let g = self.spec.gravity;
        let c12 = (q1 + q2).cos();
        let g2 = m2 * l2 * c12 * g;
        [(m1 + m2) * l1 * q1.cos() * g + g2, g2]
    }

    pub fn mass_matrix(&self, q2: f64, th: &[f64]) -> Matrix2<f64> {
        let (a, b, c) = mass_entries(q2, th);
        Matrix2::new(a, b, b, c)
    }

    /// Continuous-time derivative from `M(q) q̈ = u − C(q, q̇) q̇ − G(q)`.
    pub fn derivative<D: Scalar>(&self, x: &[D], u: &[D], th: &[D]) -> Vec<D> {
        let (q1, q1d, q2, q2d) = (x[0], x[1], x[2], x[3]);
        let (m2, l1, l2) = (th[1], th[2], th[3]);
        let h = m2 * l1 * l2 * q2.sin();
        let coriolis = [-(h * (q1d * q2d * 2.0 + q2d * q2d)), h * q1d * q1d];
        let grav = self.gravity_torque(q1, q2, th);
        let r1 = u[0] - coriolis[0] - grav[0];
        let r2 = u[1] - coriolis[1] - grav[1];
        let (a, b, c) = mass_entries(q2, th);
        let det = a * c - b * b;
        let acc1 = (c * r1 - b * r2) / det;
        let acc2 = (a * r2 - b * r1) / det;
        vec![q1d, acc1, q2d, acc2]
    }

    /// Kinetic plus potential energy.
    pub fn energy(&self, x: &[f64], th: &[f64]) -> f64 {
        let qd = Vector2::new(x[1], x[3]);
        let kinetic = 0.5 * qd.dot(&(self.mass_matrix(x[2], th) * qd));
        let (m1, m2, l1, l2) = (th[0], th[1], th[2], th[3]);
        let g = self.spec.gravity;
        let potential = (m1 + m2) * g * l1 * x[0].sin() + m2 * g * l2 * (x[0] + x[2]).sin();
        kinetic + potential
    }
}

impl ControlProblem for TwoLinkArm {
    fn dims(&self) -> Dims {
        Dims {
            state_dim: 4,
            input_dim: 2,
            horizon: self.spec.horizon,
            path_ineq: 8,
            path_eq: 0,
            term_ineq: 4,
            term_eq: 0,
        }
    }

    fn param_layout(&self) -> ParamLayout {
        ParamLayout::new(4, 4, 2)
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.spec.x0)
    }

    fn dynamics<D: Scalar>(&self, x: &[D], u: &[D], theta: &[D]) -> Vec<D> {
        rk4(|x, u, th| self.derivative(x, u, th), x, u, &theta[..4], self.spec.dt)
    }

    fn stage_cost<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], theta: &[D]) -> D {
        let mut c = (u[0] * u[0] + u[1] * u[1]) * self.spec.input_weight;
        for i in 0..4 {
            let e = theta[4 + i] * (x[i] - self.spec.x_goal[i]);
            c += e * e;
        }
        c
    }

    fn terminal_cost<D: Scalar>(&self, x: &[D], theta: &[D]) -> D {
        let mut c = D::zero();
        for i in 0..4 {
            let e = theta[4 + i] * (x[i] - self.spec.x_goal[i]);
            c += e * e;
        }
        c
    }

    /// `[q1 - q_max, -q1 - q_max, q2 - q_max, -q2 - q_max, u1 - u_max, -u1 - u_max, u2 - u_max, -u2 - u_max]`
    fn path_inequality<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], theta: &[D]) -> Vec<D> {
        let (u_max, q_max) = (theta[8], theta[9]);
        vec![
            x[0] - q_max,
            -x[0] - q_max,
            x[2] - q_max,
            -x[2] - q_max,
            u[0] - u_max,
            -u[0] - u_max,
            u[1] - u_max,
            -u[1] - u_max,
        ]
    }

    fn terminal_inequality<D: Scalar>(&self, x: &[D], theta: &[D]) -> Vec<D> {
        let q_max = theta[9];
        vec![x[0] - q_max, -x[0] - q_max, x[2] - q_max, -x[2] - q_max]
    }

    fn check_validity(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x[0].abs() > ANGLE_LIMIT || x[2].abs() > ANGLE_LIMIT || x[1].abs() > RATE_LIMIT || x[3].abs() > RATE_LIMIT {
            return Err(SocilError::Validity(format!("arm state {x:?} outside the validity box")));
        }
        if theta[..4].iter().any(|&v| v <= 0.0) {
            return Err(SocilError::Validity(format!("arm physical parameters {:?} must be positive", &theta[..4])));
        }
        let det = self.mass_matrix(x[2], theta).determinant();
        if det.abs() < MIN_MASS_DET {
            return Err(SocilError::Singular {
                what: "arm mass matrix",
                t: 0,
            });
        }
        Ok(())
    }

    fn constraint_families(&self) -> Vec<ConstraintFamily> {
        vec![
            ConstraintFamily {
                name: "u".into(),
                path: vec![4, 5, 6, 7],
                terminal: vec![],
                bound_param: 0,
            },
            ConstraintFamily {
                name: "q".into(),
                path: vec![0, 1, 2, 3],
                terminal: vec![0, 1, 2, 3],
                bound_param: 1,
            },
        ]
    }
}
