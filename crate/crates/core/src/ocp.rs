//! Parametric constrained optimal-control problems.
//!
//! A [`ControlProblem`] describes
//!
//! ```text
//! min  sum_{t<T} c_t(x_t, u_t, θ) + c_T(x_T, θ)
//! s.t. x_{t+1} = f(x_t, u_t, θ),  x_0 given
//!      g_t(x_t, u_t, θ) <= 0,  h_t(x_t, u_t, θ) = 0
//!      g_T(x_T, θ) <= 0,       h_T(x_T, θ) = 0
//! ```
//!
//! All problem functions are generic over [`Scalar`] so that the same code path
//! is evaluated on plain `f64` and on hyper-dual numbers for exact derivatives.

use nalgebra::DVector;
use num_dual::DualNum;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SocilError};

/// Number type accepted by problem functions.
pub trait Scalar: DualNum<Primitive = f64> + Copy {}

impl<T: DualNum<Primitive = f64> + Copy> Scalar for T {}

/// Lift an `f64` constant into a generic scalar.
#[inline]
pub fn lift<D: Scalar>(v: f64) -> D {
    D::from(v)
}

/// Partition sizes of the parameter vector, in the fixed order `[dyn, obj, cstr]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub dyn_len: usize,
    pub obj_len: usize,
    pub cstr_len: usize,
}

impl ParamLayout {
    pub fn new(dyn_len: usize, obj_len: usize, cstr_len: usize) -> Self {
        Self {
            dyn_len,
            obj_len,
            cstr_len,
        }
    }

    pub fn len(&self) -> usize {
        self.dyn_len + self.obj_len + self.cstr_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dyn_range(&self) -> std::ops::Range<usize> {
        0..self.dyn_len
    }

    pub fn obj_range(&self) -> std::ops::Range<usize> {
        self.dyn_len..self.dyn_len + self.obj_len
    }

    pub fn cstr_range(&self) -> std::ops::Range<usize> {
        self.dyn_len + self.obj_len..self.len()
    }
}

/// The tunable parameter θ = [θ_dyn, θ_obj, θ_cstr].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: DVector<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(layout, DVector::from_vec(values))
    }

    pub fn from_vector(layout: ParamLayout, values: DVector<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(SocilError::Dimension {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
                index: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SocilError::NonFinite {
                what: "parameter vector",
                t: 0,
                index: i,
            });
        }
        Ok(Self { values, layout })
    }

    pub fn from_parts(dyn_params: &[f64], obj_params: &[f64], cstr_params: &[f64]) -> Result<Self> {
        let layout = ParamLayout::new(dyn_params.len(), obj_params.len(), cstr_params.len());
        let values = dyn_params
            .iter()
            .chain(obj_params)
            .chain(cstr_params)
            .copied()
            .collect();
        Self::new(layout, values)
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        Self::from_vector(self.layout, values)
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn dyn_params(&self) -> &[f64] {
        &self.values.as_slice()[self.layout.dyn_range()]
    }

    pub fn obj_params(&self) -> &[f64] {
        &self.values.as_slice()[self.layout.obj_range()]
    }

    pub fn cstr_params(&self) -> &[f64] {
        &self.values.as_slice()[self.layout.cstr_range()]
    }

    /// Copy of `self` with the constraint partition replaced.
    pub fn with_cstr(&self, cstr: &[f64]) -> Result<Self> {
        if cstr.len() != self.layout.cstr_len {
            return Err(SocilError::Dimension {
                what: "constraint parameters",
                expected: self.layout.cstr_len,
                got: cstr.len(),
                index: 0,
            });
        }
        let mut values = self.values.clone();
        for (k, v) in self.layout.cstr_range().zip(cstr) {
            values[k] = *v;
        }
        self.with_values(values)
    }
}

/// Problem dimensions. Constraint counts are fixed over t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
    pub path_ineq: usize,
    pub path_eq: usize,
    pub term_ineq: usize,
    pub term_eq: usize,
}

/// A named group of one-sided box constraints sharing one bound parameter.
///
/// Used for violation reporting: `path` and `terminal` index into `g_t` and
/// `g_T`, and `bound_param` is the position of the bound inside θ_cstr.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintFamily {
    pub name: String,
    pub path: Vec<usize>,
    pub terminal: Vec<usize>,
    pub bound_param: usize,
}

/// Parametric constrained optimal-control problem.
pub trait ControlProblem: Send + Sync {
    fn dims(&self) -> Dims;

    fn param_layout(&self) -> ParamLayout;

    fn initial_state(&self) -> DVector<f64>;

    /// One discrete step `x_{t+1} = f(x_t, u_t, θ)`.
    fn dynamics<D: Scalar>(&self, x: &[D], u: &[D], theta: &[D]) -> Vec<D>;

    fn stage_cost<D: Scalar>(&self, t: usize, x: &[D], u: &[D], theta: &[D]) -> D;

    fn terminal_cost<D: Scalar>(&self, x: &[D], theta: &[D]) -> D;

    fn path_inequality<D: Scalar>(&self, _t: usize, _x: &[D], _u: &[D], _theta: &[D]) -> Vec<D> {
        Vec::new()
    }

    fn path_equality<D: Scalar>(&self, _t: usize, _x: &[D], _u: &[D], _theta: &[D]) -> Vec<D> {
        Vec::new()
    }

    fn terminal_inequality<D: Scalar>(&self, _x: &[D], _theta: &[D]) -> Vec<D> {
        Vec::new()
    }

    fn terminal_equality<D: Scalar>(&self, _x: &[D], _theta: &[D]) -> Vec<D> {
        Vec::new()
    }

    /// Reject states or parameters outside the region where the model is meaningful.
    fn check_validity(&self, _x: &[f64], _theta: &[f64]) -> Result<()> {
        Ok(())
    }

    fn constraint_families(&self) -> Vec<ConstraintFamily> {
        Vec::new()
    }
}

/// Stacked state/input sequence ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub rolled_out: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Stage vector ξ_t = (x_t, u_t). The terminal stage carries a zero input.
    pub fn stage(&self, t: usize) -> DVector<f64> {
        let x = &self.states[t];
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut xi = DVector::zeros(x.len() + m);
        xi.rows_mut(0, x.len()).copy_from(x);
        if t < self.inputs.len() {
            xi.rows_mut(x.len(), m).copy_from(&self.inputs[t]);
        }
        xi
    }

    /// Largest absolute entry difference between two trajectories of equal shape.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        let xs = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).amax());
        let us = self
            .inputs
            .iter()
            .zip(&other.inputs)
            .map(|(a, b)| (a - b).amax());
        xs.chain(us).fold(0.0, f64::max)
    }
}

/// Raw constraint values in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    pub path_ineq: Vec<DVector<f64>>,
    pub path_eq: Vec<DVector<f64>>,
    pub term_ineq: DVector<f64>,
    pub term_eq: DVector<f64>,
}

impl ConstraintValues {
    /// Largest inequality value over the whole trajectory (−∞ without inequalities).
    pub fn max_inequality(&self) -> f64 {
        self.path_ineq
            .iter()
            .chain(std::iter::once(&self.term_ineq))
            .flat_map(|g| g.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn check_theta<P: ControlProblem>(problem: &P, theta: &ParamVector) -> Result<()> {
    let layout = problem.param_layout();
    if theta.layout() != layout {
        return Err(SocilError::Dimension {
            what: "parameter vector",
            expected: layout.len(),
            got: theta.len(),
            index: 0,
        });
    }
    Ok(())
}

pub(crate) fn check_trajectory<P: ControlProblem>(problem: &P, traj: &Trajectory) -> Result<()> {
    let d = problem.dims();
    if traj.states.len() != d.horizon + 1 {
        return Err(SocilError::Dimension {
            what: "state count",
            expected: d.horizon + 1,
            got: traj.states.len(),
            index: 0,
        });
    }
    if traj.inputs.len() != d.horizon {
        return Err(SocilError::Dimension {
            what: "input count",
            expected: d.horizon,
            got: traj.inputs.len(),
            index: 0,
        });
    }
    for (t, x) in traj.states.iter().enumerate() {
        if x.len() != d.state_dim {
            return Err(SocilError::Dimension {
                what: "state",
                expected: d.state_dim,
                got: x.len(),
                index: t,
            });
        }
    }
    for (t, u) in traj.inputs.iter().enumerate() {
        if u.len() != d.input_dim {
            return Err(SocilError::Dimension {
                what: "input",
                expected: d.input_dim,
                got: u.len(),
                index: t,
            });
        }
    }
    Ok(())
}

fn finite_or(what: &'static str, t: usize, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SocilError::NonFinite { what, t, index }),
        None => Ok(()),
    }
}

/// J(θ) = Σ c_t + c_T for a given trajectory.
pub fn evaluate_cost<P: ControlProblem>(problem: &P, traj: &Trajectory, theta: &ParamVector) -> Result<f64> {
    check_theta(problem, theta)?;
    check_trajectory(problem, traj)?;
    let th = theta.as_slice();
    let mut total = 0.0;
    for (t, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        let c = problem.stage_cost(t, x.as_slice(), u.as_slice(), th);
        finite_or("stage cost", t, &[c])?;
        total += c;
    }
    let horizon = traj.horizon();
    let c = problem.terminal_cost(traj.states[horizon].as_slice(), th);
    finite_or("terminal cost", horizon, &[c])?;
    Ok(total + c)
}

pub fn evaluate_constraints<P: ControlProblem>(
    problem: &P,
    traj: &Trajectory,
    theta: &ParamVector,
) -> Result<ConstraintValues> {
    check_theta(problem, theta)?;
    check_trajectory(problem, traj)?;
    let th = theta.as_slice();
    let mut path_ineq = Vec::with_capacity(traj.horizon());
    let mut path_eq = Vec::with_capacity(traj.horizon());
    for (t, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        let g = problem.path_inequality(t, x.as_slice(), u.as_slice(), th);
        finite_or("path inequality", t, &g)?;
        let h = problem.path_equality(t, x.as_slice(), u.as_slice(), th);
        finite_or("path equality", t, &h)?;
        path_ineq.push(DVector::from_vec(g));
        path_eq.push(DVector::from_vec(h));
    }
    let horizon = traj.horizon();
    let x_t = traj.states[horizon].as_slice();
    let g = problem.terminal_inequality(x_t, th);
    finite_or("terminal inequality", horizon, &g)?;
    let h = problem.terminal_equality(x_t, th);
    finite_or("terminal equality", horizon, &h)?;
    Ok(ConstraintValues {
        path_ineq,
        path_eq,
        term_ineq: DVector::from_vec(g),
        term_eq: DVector::from_vec(h),
    })
}

/// Iterate the dynamics from x_0 under the given inputs.
pub fn rollout<P: ControlProblem>(problem: &P, theta: &ParamVector, inputs: &[DVector<f64>]) -> Result<Trajectory> {
    check_theta(problem, theta)?;
    let d = problem.dims();
    if inputs.len() != d.horizon {
        return Err(SocilError::Dimension {
            what: "input count",
            expected: d.horizon,
            got: inputs.len(),
            index: 0,
        });
    }
    let th = theta.as_slice();
    let mut states = Vec::with_capacity(d.horizon + 1);
    let x0 = problem.initial_state();
    problem.check_validity(x0.as_slice(), th)?;
    states.push(x0);
    for (t, u) in inputs.iter().enumerate() {
        if u.len() != d.input_dim {
            return Err(SocilError::Dimension {
                what: "input",
                expected: d.input_dim,
                got: u.len(),
                index: t,
            });
        }
        let next = problem.dynamics(states[t].as_slice(), u.as_slice(), th);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SocilError::Rollout { step: t });
        }
        problem
            .check_validity(&next, th)
            .map_err(|_| SocilError::Rollout { step: t })?;
        states.push(DVector::from_vec(next));
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        rolled_out: true,
    })
}

/// Zero input sequence of the right shape.
pub fn zero_inputs<P: ControlProblem>(problem: &P) -> Vec<DVector<f64>> {
    let d = problem.dims();
    vec![DVector::zeros(d.input_dim); d.horizon]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::lqr_toy::LqrToy;

    /// Problem with no cost and identity dynamics.
    struct Frozen;

    impl ControlProblem for Frozen {
        fn dims(&self) -> Dims {
            Dims {
                state_dim: 2,
                input_dim: 1,
                horizon: 3,
                path_ineq: 0,
                path_eq: 0,
                term_ineq: 0,
                term_eq: 0,
            }
        }
        fn param_layout(&self) -> ParamLayout {
            ParamLayout::new(0, 1, 0)
        }
        fn initial_state(&self) -> DVector<f64> {
            DVector::from_vec(vec![0.3, -1.2])
        }
        fn dynamics<D: Scalar>(&self, x: &[D], _u: &[D], _theta: &[D]) -> Vec<D> {
            x.to_vec()
        }
        fn stage_cost<D: Scalar>(&self, _t: usize, _x: &[D], _u: &[D], _theta: &[D]) -> D {
            D::zero()
        }
        fn terminal_cost<D: Scalar>(&self, _x: &[D], _theta: &[D]) -> D {
            D::zero()
        }
    }

    #[test]
    fn zero_cost_problem_costs_nothing() {
        let theta = ParamVector::from_parts(&[], &[1.0], &[]).unwrap();
        let inputs = vec![DVector::from_element(1, 4.0); 3];
        let traj = rollout(&Frozen, &theta, &inputs).unwrap();
        assert_eq!(evaluate_cost(&Frozen, &traj, &theta).unwrap(), 0.0);
        for x in &traj.states {
            assert_eq!(x, &Frozen.initial_state());
        }
        assert!(traj.rolled_out);
    }

    #[test]
    fn lqr_toy_cost_and_rollout() {
        let toy = LqrToy::new(1, 1.0);
        let theta = toy.true_theta(1.0);
        let traj = rollout(&toy, &theta, &[DVector::from_element(1, -0.5)]).unwrap();
        assert_eq!(traj.states[0][0], 1.0);
        assert_eq!(traj.states[1][0], 0.5);
        let j = evaluate_cost(&toy, &traj, &theta).unwrap();
        assert!((j - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rollout_reproduces_states_bit_identically() {
        let toy = LqrToy::new(4, 0.7);
        let theta = toy.true_theta(2.0);
        let inputs: Vec<_> = (0..4).map(|k| DVector::from_element(1, 0.1 * k as f64 - 0.2)).collect();
        let a = rollout(&toy, &theta, &inputs).unwrap();
        let b = rollout(&toy, &theta, &a.inputs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_errors_name_the_index() {
        let toy = LqrToy::new(2, 1.0);
        let theta = toy.true_theta(1.0);
        let mut traj = rollout(&toy, &theta, &zero_inputs(&toy)).unwrap();
        traj.inputs[1] = DVector::zeros(3);
        match evaluate_cost(&toy, &traj, &theta) {
            Err(SocilError::Dimension { index, what, .. }) => {
                assert_eq!(what, "input");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(rollout(&toy, &theta, &[]).is_err());
        let bad_theta = ParamVector::from_parts(&[], &[1.0, 2.0], &[]).unwrap();
        assert!(evaluate_cost(&toy, &traj, &bad_theta).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::from_parts(&[1.0], &[f64::NAN], &[]).is_err());
        let p = ParamVector::from_parts(&[1.0, 2.0], &[3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(p.dyn_params(), &[1.0, 2.0]);
        assert_eq!(p.obj_params(), &[3.0]);
        assert_eq!(p.cstr_params(), &[4.0, 5.0]);
        assert_eq!(p.len(), 5);
        let q = p.with_cstr(&[7.0, 8.0]).unwrap();
        assert_eq!(q.cstr_params(), &[7.0, 8.0]);
        assert_eq!(q.dyn_params(), p.dyn_params());
    }
}
