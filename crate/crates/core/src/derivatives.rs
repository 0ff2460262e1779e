//! First and second partial derivatives of problem functions.
//!
//! Every problem function is viewed as a map of a stacked argument
//! `z = (x, u, θ)` (or `(x, θ)` for terminal functions). A [`Jet`] holds the
//! value, the Jacobian with respect to the first `vars` coordinates of `z`,
//! and one Hessian per output component. Hessian rows are only evaluated for
//! the first `hess_rows` coordinates (plus their symmetric counterparts), which
//! skips the θθ block nobody needs.

use nalgebra::{DMatrix, DVector};
use num_dual::HyperDual64;
use serde::{Deserialize, Serialize};

use crate::ocp::{ControlProblem, Scalar};

/// Central-difference step for first derivatives, relative to `1 + |z_i|`.
pub const FD_STEP: f64 = 1e-5;
/// Central-difference step for second derivatives, relative to `1 + |z_i|`.
pub const FD_STEP_SECOND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Exact forward-mode differentiation with hyper-dual numbers.
    #[default]
    Analytic,
    /// Central finite differences.
    Numeric,
}

/// A vector-valued function that can be evaluated on any [`Scalar`].
pub trait VectorFunction {
    fn eval<D: Scalar>(&self, z: &[D]) -> Vec<D>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: DVector<f64>,
    /// `outputs × vars`
    pub jacobian: DMatrix<f64>,
    /// One `vars × vars` matrix per output; empty when second order was not requested.
    pub hessians: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DerivativeProvider {
    pub mode: DerivativeMode,
}

impl DerivativeProvider {
    pub fn analytic() -> Self {
        Self {
            mode: DerivativeMode::Analytic,
        }
    }

    pub fn numeric() -> Self {
        Self {
            mode: DerivativeMode::Numeric,
        }
    }

    /// Value, Jacobian over `z[..vars]` and, if `hess_rows > 0`, Hessians whose
    /// rows `< hess_rows` (and matching columns) are filled.
    pub fn jet<F: VectorFunction>(&self, f: &F, z: &[f64], vars: usize, hess_rows: usize) -> Jet {
        assert!(vars <= z.len() && hess_rows <= vars);
        match self.mode {
            DerivativeMode::Analytic => analytic_jet(f, z, vars, hess_rows),
            DerivativeMode::Numeric => numeric_jet(f, z, vars, hess_rows),
        }
    }
}

fn analytic_jet<F: VectorFunction>(f: &F, z: &[f64], vars: usize, hess_rows: usize) -> Jet {
    let value = DVector::from_vec(f.eval::<f64>(z));
    let k = value.len();
    let mut jacobian = DMatrix::zeros(k, vars);
    let mut hessians = Vec::new();
    let mut zd: Vec<HyperDual64> = z.iter().map(|&v| HyperDual64::from_re(v)).collect();

    if hess_rows == 0 {
        for j in 0..vars {
            zd[j].eps1 = 1.0;
            let out = f.eval(&zd);
            zd[j].eps1 = 0.0;
            for (r, o) in out.iter().enumerate() {
                jacobian[(r, j)] = o.eps1;
            }
        }
        return Jet {
            value,
            jacobian,
            hessians,
        };
    }

    hessians = vec![DMatrix::zeros(vars, vars); k];
    for i in 0..hess_rows {
        zd[i].eps1 = 1.0;
        for j in i..vars {
            zd[j].eps2 = 1.0;
            let out = f.eval(&zd);
            zd[j].eps2 = 0.0;
            for (r, o) in out.iter().enumerate() {
                if i == 0 {
                    jacobian[(r, j)] = o.eps2;
                }
                hessians[r][(i, j)] = o.eps1eps2;
                hessians[r][(j, i)] = o.eps1eps2;
            }
        }
        zd[i].eps1 = 0.0;
    }
    Jet {
        value,
        jacobian,
        hessians,
    }
}

fn eval_shifted<F: VectorFunction>(f: &F, z: &mut [f64], shifts: &[(usize, f64)]) -> DVector<f64> {
    let saved: Vec<f64> = shifts.iter().map(|&(i, _)| z[i]).collect();
    for &(i, h) in shifts {
        z[i] += h;
    }
    let out = DVector::from_vec(f.eval::<f64>(z));
    for (&(i, _), s) in shifts.iter().zip(saved) {
        z[i] = s;
    }
    out
}

fn numeric_jet<F: VectorFunction>(f: &F, z: &[f64], vars: usize, hess_rows: usize) -> Jet {
    let mut zw = z.to_vec();
    let value = DVector::from_vec(f.eval::<f64>(z));
    let k = value.len();
    let mut jacobian = DMatrix::zeros(k, vars);
    for j in 0..vars {
        let h = FD_STEP * (1.0 + z[j].abs());
        let plus = eval_shifted(f, &mut zw, &[(j, h)]);
        let minus = eval_shifted(f, &mut zw, &[(j, -h)]);
        jacobian.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    let mut hessians = Vec::new();
    if hess_rows > 0 {
        hessians = vec![DMatrix::zeros(vars, vars); k];
        for i in 0..hess_rows {
            let hi = FD_STEP_SECOND * (1.0 + z[i].abs());
            for j in i..vars {
                let hj = FD_STEP_SECOND * (1.0 + z[j].abs());
                let pp = eval_shifted(f, &mut zw, &[(i, hi), (j, hj)]);
                let pm = eval_shifted(f, &mut zw, &[(i, hi), (j, -hj)]);
                let mp = eval_shifted(f, &mut zw, &[(i, -hi), (j, hj)]);
                let mm = eval_shifted(f, &mut zw, &[(i, -hi), (j, -hj)]);
                let d = (pp - pm - mp + mm) / (4.0 * hi * hj);
                for r in 0..k {
                    hessians[r][(i, j)] = d[r];
                    hessians[r][(j, i)] = d[r];
                }
            }
        }
    }
    Jet {
        value,
        jacobian,
        hessians,
    }
}

/// Which problem function a [`StageFunction`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Dynamics,
    Cost,
    Inequality,
    Equality,
}

/// A stage function of `z = (x, u, θ)` at time `t`.
pub struct StageFunction<'a, P> {
    pub problem: &'a P,
    pub t: usize,
    pub kind: StageKind,
}

impl<P: ControlProblem> VectorFunction for StageFunction<'_, P> {
    fn eval<D: Scalar>(&self, z: &[D]) -> Vec<D> {
        let d = self.problem.dims();
        let (x, rest) = z.split_at(d.state_dim);
        let (u, theta) = rest.split_at(d.input_dim);
        match self.kind {
            StageKind::Dynamics => self.problem.dynamics(x, u, theta),
            StageKind::Cost => vec![self.problem.stage_cost(self.t, x, u, theta)],
            StageKind::Inequality => self.problem.path_inequality(self.t, x, u, theta),
            StageKind::Equality => self.problem.path_equality(self.t, x, u, theta),
        }
    }
}

/// A terminal function of `z = (x, θ)`. `Dynamics` is not a valid kind here.
pub struct TerminalFunction<'a, P> {
    pub problem: &'a P,
    pub kind: StageKind,
}

impl<P: ControlProblem> VectorFunction for TerminalFunction<'_, P> {
    fn eval<D: Scalar>(&self, z: &[D]) -> Vec<D> {
        let n = self.problem.dims().state_dim;
        let (x, theta) = z.split_at(n);
        match self.kind {
            StageKind::Cost => vec![self.problem.terminal_cost(x, theta)],
            StageKind::Inequality => self.problem.terminal_inequality(x, theta),
            StageKind::Equality => self.problem.terminal_equality(x, theta),
            StageKind::Dynamics => unreachable!("terminal stage has no dynamics"),
        }
    }
}

/// Stack `(x, u, θ)` into one argument vector.
pub fn stack(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Normwise relative difference `max|a-b| / max(1, max|b|)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / b.amax().max(1.0)
}

/// Largest relative disagreement between analytic and numeric jets of all
/// stage and terminal functions at one point, including the θ columns.
pub fn provider_disagreement<P: ControlProblem>(problem: &P, t: usize, x: &[f64], u: &[f64], theta: &[f64]) -> f64 {
    let d = problem.dims();
    let analytic = DerivativeProvider::analytic();
    let numeric = DerivativeProvider::numeric();
    let z = stack(&[x, u, theta]);
    let vars = z.len();
    let hess_rows = d.state_dim + d.input_dim;
    let mut worst: f64 = 0.0;
    let mut compare = |a: Jet, b: Jet| {
        worst = worst.max(relative_error(&a.jacobian, &b.jacobian));
        for (ha, hb) in a.hessians.iter().zip(&b.hessians) {
            worst = worst.max(relative_error(ha, hb));
        }
    };
    for kind in [
        StageKind::Dynamics,
        StageKind::Cost,
        StageKind::Inequality,
        StageKind::Equality,
    ] {
        let f = StageFunction { problem, t, kind };
        compare(
            analytic.jet(&f, &z, vars, hess_rows),
            numeric.jet(&f, &z, vars, hess_rows),
        );
    }
    let zt = stack(&[x, theta]);
    for kind in [StageKind::Cost, StageKind::Inequality, StageKind::Equality] {
        let f = TerminalFunction { problem, kind };
        compare(
            analytic.jet(&f, &zt, zt.len(), d.state_dim),
            numeric.jet(&f, &zt, zt.len(), d.state_dim),
        );
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly;

    impl VectorFunction for Poly {
        // (a^2 b + sin(c), a * c)
        fn eval<D: Scalar>(&self, z: &[D]) -> Vec<D> {
            vec![z[0] * z[0] * z[1] + z[2].sin(), z[0] * z[2]]
        }
    }

    #[test]
    fn analytic_jet_matches_hand_derivatives() {
        let z = [1.5, -2.0, 0.3];
        let jet = DerivativeProvider::analytic().jet(&Poly, &z, 3, 3);
        let (a, b, c) = (z[0], z[1], z[2]);
        assert_eq!(jet.value[0], a * a * b + c.sin());
        let expected_jac = DMatrix::from_row_slice(2, 3, &[2.0 * a * b, a * a, c.cos(), c, 0.0, a]);
        assert!((jet.jacobian.clone() - expected_jac).amax() < 1e-14);
        let h0 = DMatrix::from_row_slice(3, 3, &[2.0 * b, 2.0 * a, 0.0, 2.0 * a, 0.0, 0.0, 0.0, 0.0, -c.sin()]);
        assert!((jet.hessians[0].clone() - h0).amax() < 1e-14);
        let h1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((jet.hessians[1].clone() - h1).amax() < 1e-14);
    }

    #[test]
    fn partial_hessian_rows_skip_trailing_block() {
        let z = [1.5, -2.0, 0.3];
        let jet = DerivativeProvider::analytic().jet(&Poly, &z, 3, 1);
        // row/column 0 filled, (2,2) left untouched
        assert_eq!(jet.hessians[0][(2, 2)], 0.0);
        assert!((jet.hessians[1][(0, 2)] - 1.0).abs() < 1e-15);
        assert!((jet.hessians[1][(2, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(jet.jacobian.ncols(), 3);
    }

    #[test]
    fn numeric_and_analytic_agree() {
        let z = [0.4, 1.1, -0.7];
        let a = DerivativeProvider::analytic().jet(&Poly, &z, 3, 3);
        let n = DerivativeProvider::numeric().jet(&Poly, &z, 3, 3);
        assert!(relative_error(&n.jacobian, &a.jacobian) < 1e-8);
        for (x, y) in n.hessians.iter().zip(&a.hessians) {
            assert!(relative_error(x, y) < 1e-6);
        }
        let first_only = DerivativeProvider::analytic().jet(&Poly, &z, 2, 0);
        assert!(first_only.hessians.is_empty());
        assert!((first_only.jacobian.clone() - a.jacobian.columns(0, 2)).amax() < 1e-15);
    }
}
