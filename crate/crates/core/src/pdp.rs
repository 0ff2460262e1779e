//! Trajectory Jacobian ∂ξ/∂θ of the barrier-smoothed problem by the
//! auxiliary-control-system recursion, plus its validation oracles.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::barrier::AugmentedProblem;
use crate::derivatives::DerivativeProvider;
use crate::error::{Result, SocilError};
use crate::ocp::{check_theta, ControlProblem, ParamVector};
use crate::trajopt::{expand, solve, Solution, SolverSettings};

/// Eigenvalue below which `L̄^{uu}` receives a one-off shift.
const UU_MIN_EIG: f64 = 1e-9;
const UU_SHIFT: f64 = 1e-8;

/// Hamiltonian derivative blocks along a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianDerivs {
    pub lxx: Vec<DMatrix<f64>>,
    pub lxu: Vec<DMatrix<f64>>,
    pub luu: Vec<DMatrix<f64>>,
    pub lxt: Vec<DMatrix<f64>>,
    pub lut: Vec<DMatrix<f64>>,
    pub fx: Vec<DMatrix<f64>>,
    pub fu: Vec<DMatrix<f64>>,
    pub ft: Vec<DMatrix<f64>>,
    pub term_lxx: DMatrix<f64>,
    pub term_lxt: DMatrix<f64>,
}

impl HamiltonianDerivs {
    pub fn horizon(&self) -> usize {
        self.lxx.len()
    }

    pub fn state_dim(&self) -> usize {
        self.term_lxx.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.term_lxt.ncols()
    }
}

/// `X_t = ∂x_t/∂θ` for t = 0..=T and `U_t = ∂u_t/∂θ` for t < T.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryJacobian {
    pub states: Vec<DMatrix<f64>>,
    pub inputs: Vec<DMatrix<f64>>,
}

impl TrajectoryJacobian {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `[X_t; U_t]`, with a zero input block at the terminal stage.
    pub fn stage(&self, t: usize) -> DMatrix<f64> {
        let x = &self.states[t];
        let (n, p) = x.shape();
        let m = self.inputs.first().map_or(0, |u| u.nrows());
        let mut out = DMatrix::zeros(n + m, p);
        out.view_mut((0, 0), (n, p)).copy_from(x);
        if t < self.inputs.len() {
            out.view_mut((n, 0), (m, p)).copy_from(&self.inputs[t]);
        }
        out
    }

    /// `max|self − reference| / max|reference|` over all blocks (absolute when the reference vanishes).
    pub fn relative_error(&self, reference: &TrajectoryJacobian) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let ours = self.states.iter().chain(&self.inputs);
        let theirs = reference.states.iter().chain(&reference.inputs);
        for (a, b) in ours.zip(theirs) {
            diff = diff.max((a - b).amax());
            scale = scale.max(b.amax());
        }
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    /// `max_t ‖X_{t+1} − (F^x X_t + F^u U_t + F^θ)‖`.
    pub fn forward_residual(&self, derivs: &HamiltonianDerivs) -> f64 {
        (0..self.horizon())
            .map(|t| {
                let pred = &derivs.fx[t] * &self.states[t] + &derivs.fu[t] * &self.inputs[t] + &derivs.ft[t];
                (&self.states[t + 1] - pred).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Backward-pass matrices of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionState {
    /// V_0..V_T
    pub v: Vec<DMatrix<f64>>,
    /// W_0..W_T
    pub w: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
    pub n: Vec<DMatrix<f64>>,
    /// Largest asymmetry of any V_t before it was symmetrized.
    pub max_asymmetry: f64,
}

fn finite_block(block: &'static str, t: usize, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SocilError::Assembly { block, t })
    }
}

/// Evaluate every Hamiltonian block at `(x_t, u_t, λ_{t+1}, θ)` of the solution.
pub fn assemble_derivs<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    sol: &Solution,
    theta: &ParamVector,
    provider: &DerivativeProvider,
) -> Result<HamiltonianDerivs> {
    check_theta(aug.problem, theta)?;
    let d = aug.problem.dims();
    let (n, m, p) = (d.state_dim, d.input_dim, theta.len());
    let exp = expand(aug, provider, &sol.trajectory, theta.as_slice(), true);
    let horizon = exp.stages.len();
    let mut out = HamiltonianDerivs {
        lxx: Vec::with_capacity(horizon),
        lxu: Vec::with_capacity(horizon),
        luu: Vec::with_capacity(horizon),
        lxt: Vec::with_capacity(horizon),
        lut: Vec::with_capacity(horizon),
        fx: Vec::with_capacity(horizon),
        fu: Vec::with_capacity(horizon),
        ft: Vec::with_capacity(horizon),
        term_lxx: exp.terminal.hess.view((0, 0), (n, n)).into_owned(),
        term_lxt: exp.terminal.hess.view((0, n), (n, p)).into_owned(),
    };
    for (t, s) in exp.stages.iter().enumerate() {
        let lambda = &sol.costates[t];
        let mut h = s.hess.clone();
        for (i, fh) in s.dyn_hess.iter().enumerate() {
            h += fh * lambda[i];
        }
        let blocks = [
            ("Lxx", h.view((0, 0), (n, n)).into_owned()),
            ("Lxu", h.view((0, n), (n, m)).into_owned()),
            ("Luu", h.view((n, n), (m, m)).into_owned()),
            ("Lxθ", h.view((0, n + m), (n, p)).into_owned()),
            ("Luθ", h.view((n, n + m), (m, p)).into_owned()),
            ("Fx", s.dyn_jac.view((0, 0), (n, n)).into_owned()),
            ("Fu", s.dyn_jac.view((0, n), (n, m)).into_owned()),
            ("Fθ", s.dyn_jac.view((0, n + m), (n, p)).into_owned()),
        ];
        for (name, b) in &blocks {
            finite_block(name, t, b)?;
        }
        let [lxx, lxu, luu, lxt, lut, fx, fu, ft] = blocks.map(|(_, b)| b);
        out.lxx.push(lxx);
        out.lxu.push(lxu);
        out.luu.push(luu);
        out.lxt.push(lxt);
        out.lut.push(lut);
        out.fx.push(fx);
        out.fu.push(fu);
        out.ft.push(ft);
    }
    finite_block("terminal Lxx", horizon, &out.term_lxx)?;
    finite_block("terminal Lxθ", horizon, &out.term_lxt)?;
    Ok(out)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Factor `L̄^{uu}`, shifting once by `1e-8 I` when its smallest eigenvalue is tiny.
fn factor_uu(luu: &DMatrix<f64>, t: usize) -> Result<LU<f64, Dyn, Dyn>> {
    let m = luu.nrows();
    let mut mat = symmetrize(luu);
    let mut eig = mat.clone().symmetric_eigenvalues();
    if eig.min() < UU_MIN_EIG {
        mat += DMatrix::identity(m, m) * UU_SHIFT;
        eig.add_scalar_mut(UU_SHIFT);
    }
    let scale = eig.amax().max(1.0);
    let smallest = eig.iter().fold(f64::INFINITY, |acc, e| acc.min(e.abs()));
    if !(smallest >= 1e-14 * scale) {
        return Err(SocilError::Singular { what: "L_uu", t });
    }
    Ok(mat.lu())
}

/// Run the recursion and return both the Jacobian and the backward-pass matrices.
pub fn pdp_recursion(derivs: &HamiltonianDerivs) -> Result<(TrajectoryJacobian, RecursionState)> {
    let horizon = derivs.horizon();
    let n = derivs.state_dim();
    let p = derivs.param_dim();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut rec = RecursionState {
        v: vec![DMatrix::zeros(n, n); horizon + 1],
        w: vec![DMatrix::zeros(n, p); horizon + 1],
        a: Vec::with_capacity(horizon),
        b: Vec::with_capacity(horizon),
        c: Vec::with_capacity(horizon),
        m: Vec::with_capacity(horizon),
        n: Vec::with_capacity(horizon),
        max_asymmetry: 0.0,
    };
    let mut uu_lu = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let lu = factor_uu(&derivs.luu[t], t)?;
        let lux = derivs.lxu[t].transpose();
        let s_ux = lu.solve(&lux).ok_or(SocilError::Singular { what: "L_uu", t })?;
        let s_ut = lu.solve(&derivs.lut[t]).ok_or(SocilError::Singular { what: "L_uu", t })?;
        let s_fu = lu
            .solve(&derivs.fu[t].transpose())
            .ok_or(SocilError::Singular { what: "L_uu", t })?;
        rec.a.push(&derivs.fx[t] - &derivs.fu[t] * &s_ux);
        rec.b.push(&derivs.lxx[t] - &derivs.lxu[t] * &s_ux);
        rec.c.push(&derivs.fu[t] * &s_fu);
        rec.m.push(&derivs.ft[t] - &derivs.fu[t] * &s_ut);
        rec.n.push(&derivs.lxt[t] - &derivs.lxu[t] * &s_ut);
        uu_lu.push(lu);
    }

    rec.v[horizon] = symmetrize(&derivs.term_lxx);
    rec.w[horizon] = derivs.term_lxt.clone();
    // (I + V_{t+1} C_t) factorizations, reused by the forward pass
    let mut gate = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let v_next = &rec.v[t + 1];
        let lu = (&eye + v_next * &rec.c[t]).lu();
        if !lu.is_invertible() {
            return Err(SocilError::Singular {
                what: "I + V_{t+1} C_t",
                t,
            });
        }
        let err = || SocilError::Singular {
            what: "I + V_{t+1} C_t",
            t,
        };
        let va = lu.solve(&(v_next * &rec.a[t])).ok_or_else(err)?;
        let v = &rec.b[t] + rec.a[t].transpose() * va;
        let rhs = &rec.w[t + 1] + v_next * &rec.m[t];
        let w = rec.a[t].transpose() * lu.solve(&rhs).ok_or_else(err)? + &rec.n[t];
        rec.max_asymmetry = rec.max_asymmetry.max((&v - v.transpose()).amax());
        rec.v[t] = symmetrize(&v);
        rec.w[t] = w;
        gate.push(lu);
    }
    gate.reverse();

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(DMatrix::zeros(n, p));
    for t in 0..horizon {
        let x = &states[t];
        let v_next = &rec.v[t + 1];
        // Λ_{t+1} = (I + V C)⁻¹ (V A X_t + V M_t + W_{t+1})
        let rhs = v_next * (&rec.a[t] * x + &rec.m[t]) + &rec.w[t + 1];
        let costate = gate[t].solve(&rhs).ok_or(SocilError::Singular {
            what: "I + V_{t+1} C_t",
            t,
        })?;
        let lux = derivs.lxu[t].transpose();
        let rhs_u = lux * x + &derivs.lut[t] + derivs.fu[t].transpose() * costate;
        let u = -uu_lu[t].solve(&rhs_u).ok_or(SocilError::Singular { what: "L_uu", t })?;
        let next = &derivs.fx[t] * x + &derivs.fu[t] * &u + &derivs.ft[t];
        inputs.push(u);
        states.push(next);
    }
    Ok((TrajectoryJacobian { states, inputs }, rec))
}

pub fn pdp_jacobian(derivs: &HamiltonianDerivs) -> Result<TrajectoryJacobian> {
    pdp_recursion(derivs).map(|(jac, _)| jac)
}

/// Central differences of full re-solves, warm-started from `base` when given.
pub fn finite_difference_jacobian<P: ControlProblem>(
    aug: &AugmentedProblem<'_, P>,
    theta: &ParamVector,
    settings: &SolverSettings,
    step: f64,
    base: Option<&Solution>,
) -> Result<TrajectoryJacobian> {
    check_theta(aug.problem, theta)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(SocilError::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let d = aug.problem.dims();
    let (n, m, p) = (d.state_dim, d.input_dim, theta.len());
    let mut states = vec![DMatrix::zeros(n, p); d.horizon + 1];
    let mut inputs = vec![DMatrix::zeros(m, p); d.horizon];
    let warm = base.map(|s| &s.trajectory);
    for k in 0..p {
        let shifted = |sign: f64| -> Result<Solution> {
            let mut v = theta.values().clone();
            v[k] += sign * step;
            let th = theta.with_values(v)?;
            let sol = solve(aug, &th, warm, settings)?;
            if !sol.converged {
                return Err(SocilError::Oracle(format!(
                    "re-solve at coordinate {k} ({:+}) did not converge, stationarity {:e}",
                    sign * step,
                    sol.stationarity
                )));
            }
            Ok(sol)
        };
        let plus = shifted(1.0)?;
        let minus = shifted(-1.0)?;
        let scale = 1.0 / (2.0 * step);
        for t in 0..=d.horizon {
            let col: DVector<f64> = (&plus.trajectory.states[t] - &minus.trajectory.states[t]) * scale;
            states[t].set_column(k, &col);
        }
        for t in 0..d.horizon {
            let col: DVector<f64> = (&plus.trajectory.inputs[t] - &minus.trajectory.inputs[t]) * scale;
            inputs[t].set_column(k, &col);
        }
    }
    Ok(TrajectoryJacobian { states, inputs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderReport {
    pub min_quadratic_form: f64,
    pub satisfied: bool,
}

/// Quadratic form of the second-order condition along linearized dynamics
/// started from `δx_0 = 0`.
pub fn second_order_form(derivs: &HamiltonianDerivs, du: &[DVector<f64>]) -> f64 {
    let n = derivs.state_dim();
    let mut dx = DVector::zeros(n);
    let mut total = 0.0;
    for (t, u) in du.iter().enumerate() {
        total += dx.dot(&(&derivs.lxx[t] * &dx))
            + 2.0 * dx.dot(&(&derivs.lxu[t] * u))
            + u.dot(&(&derivs.luu[t] * u));
        dx = &derivs.fx[t] * &dx + &derivs.fu[t] * u;
    }
    total + dx.dot(&(&derivs.term_lxx * &dx))
}

/// Sample `trials` random unit-norm input sequences and report the smallest form.
pub fn check_second_order(derivs: &HamiltonianDerivs, trials: usize, rng_seed: u64) -> SecondOrderReport {
    let horizon = derivs.horizon();
    let m = derivs.fu.first().map_or(0, |f| f.ncols());
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut min_form = f64::INFINITY;
    for _ in 0..trials {
        let mut du: Vec<DVector<f64>> = (0..horizon)
            .map(|_| DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let norm = du.iter().map(|u| u.norm_squared()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for u in &mut du {
            *u /= norm;
        }
        min_form = min_form.min(second_order_form(derivs, &du));
    }
    SecondOrderReport {
        min_quadratic_form: min_form,
        satisfied: min_form > 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{augment, BarrierConfig};
    use crate::ocp::{Dims, ParamLayout, Scalar};
    use crate::systems::LqrToy;

    fn toy_solution(theta: f64) -> (LqrToy, ParamVector, Solution) {
        let toy = LqrToy::new(1, 1.0);
        let th = toy.true_theta(theta);
        let sol = solve(&AugmentedProblem::unconstrained(&toy), &th, None, &SolverSettings::tight()).unwrap();
        (toy, th, sol)
    }

    #[test]
    fn lqr_toy_jacobian_matches_closed_form() {
        let (toy, th, sol) = toy_solution(1.0);
        let aug = AugmentedProblem::unconstrained(&toy);
        let derivs = assemble_derivs(&aug, &sol, &th, &DerivativeProvider::analytic()).unwrap();
        let jac = pdp_jacobian(&derivs).unwrap();
        assert_eq!(jac.states[0], DMatrix::zeros(1, 1));
        assert!((jac.inputs[0][(0, 0)] + 0.25).abs() < 1e-12);
        assert!((jac.states[1][(0, 0)] + 0.25).abs() < 1e-12);
        assert!(jac.forward_residual(&derivs) < 1e-12);
    }

    #[test]
    fn lqr_toy_finite_differences_match() {
        let (toy, th, sol) = toy_solution(1.0);
        let aug = AugmentedProblem::unconstrained(&toy);
        let fd = finite_difference_jacobian(&aug, &th, &SolverSettings::tight(), 1e-5, Some(&sol)).unwrap();
        assert!((fd.inputs[0][(0, 0)] + 0.25).abs() < 1e-6);
    }

    #[test]
    fn second_order_form_on_toy() {
        let (toy, th, sol) = toy_solution(1.0);
        let aug = AugmentedProblem::unconstrained(&toy);
        let derivs = assemble_derivs(&aug, &sol, &th, &DerivativeProvider::analytic()).unwrap();
        let form = second_order_form(&derivs, &[DVector::from_element(1, 1.0)]);
        assert!((form - 4.0).abs() < 1e-12);
        let rep = check_second_order(&derivs, 50, 1);
        assert!(rep.satisfied && rep.min_quadratic_form > 0.0);
    }

    #[test]
    fn single_inequality_barrier_curvature() {
        // g = u - 1 at u = 0 on the toy with α = 0.5, β = 0.1
        struct Bounded;
        impl ControlProblem for Bounded {
            fn dims(&self) -> Dims {
                Dims {
                    state_dim: 1,
                    input_dim: 1,
                    horizon: 1,
                    path_ineq: 1,
                    path_eq: 0,
                    term_ineq: 0,
                    term_eq: 0,
                }
            }
            fn param_layout(&self) -> ParamLayout {
                ParamLayout::new(0, 1, 0)
            }
            fn initial_state(&self) -> DVector<f64> {
                DVector::from_element(1, 0.0)
            }
            fn dynamics<D: Scalar>(&self, x: &[D], u: &[D], _th: &[D]) -> Vec<D> {
                vec![x[0] + u[0]]
            }
            fn stage_cost<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], th: &[D]) -> D {
                th[0] * x[0] * x[0] + u[0] * u[0]
            }
            fn terminal_cost<D: Scalar>(&self, x: &[D], th: &[D]) -> D {
                th[0] * x[0] * x[0]
            }
            fn path_inequality<D: Scalar>(&self, _t: usize, _x: &[D], u: &[D], _th: &[D]) -> Vec<D> {
                vec![u[0] - 1.0]
            }
        }
        let th = ParamVector::from_parts(&[], &[1.0], &[]).unwrap();
        let aug = augment(&Bounded, BarrierConfig::new(0.5, 0.1).unwrap());
        let traj = crate::ocp::rollout(&Bounded, &th, &[DVector::from_element(1, 0.0)]).unwrap();
        let sol = Solution {
            trajectory: traj,
            costates: vec![DVector::zeros(1)],
            final_cost: 0.0,
            iterations: 0,
            stationarity: 0.0,
            converged: true,
        };
        let derivs = assemble_derivs(&aug, &sol, &th, &DerivativeProvider::analytic()).unwrap();
        let sigma = 1.0 / (1.0 + 10f64.exp());
        let expected = 2.0 + sigma * (1.0 - sigma) / 0.05;
        assert!((derivs.luu[0][(0, 0)] - expected).abs() < 1e-15);
    }
}
