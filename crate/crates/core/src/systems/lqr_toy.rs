//! Scalar integrator `x' = x + u` with cost `θx² + u²` and terminal cost `θx_T²`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SocilError};
use crate::ocp::{ConstraintFamily, ControlProblem, Dims, ParamLayout, ParamVector, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrToySpec {
    pub horizon: usize,
    pub x0: f64,
    pub theta: f64,
    /// Optional lower input bound `u ≥ -bound`, written as `g = -u - bound ≤ 0`.
    #[serde(default)]
    pub input_bound: Option<f64>,
}

impl Default for LqrToySpec {
    fn default() -> Self {
        Self {
            horizon: 1,
            x0: 1.0,
            theta: 1.0,
            input_bound: None,
        }
    }
}

impl LqrToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(SocilError::Config("horizon must be at least 1".into()));
        }
        super::check_positive("lqr-toy theta", self.theta)?;
        if !self.x0.is_finite() {
            return Err(SocilError::Config("lqr-toy x0 must be finite".into()));
        }
        if let Some(b) = self.input_bound {
            super::check_positive("lqr-toy input bound", b)?;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<LqrToy> {
        self.validate()?;
        Ok(LqrToy {
            horizon: self.horizon,
            x0: self.x0,
            input_bound: self.input_bound,
        })
    }

    pub fn true_theta(&self) -> ParamVector {
        ParamVector::from_parts(&[], &[self.theta], &[]).expect("finite theta")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrToy {
    pub horizon: usize,
    pub x0: f64,
    pub input_bound: Option<f64>,
}

impl LqrToy {
    pub fn new(horizon: usize, x0: f64) -> Self {
        Self {
            horizon,
            x0,
            input_bound: None,
        }
    }

    pub fn with_input_bound(mut self, bound: f64) -> Self {
        self.input_bound = Some(bound);
        self
    }

    pub fn true_theta(&self, theta: f64) -> ParamVector {
        ParamVector::from_parts(&[], &[theta], &[]).expect("finite theta")
    }
}

impl ControlProblem for LqrToy {
    fn dims(&self) -> Dims {
        Dims {
            state_dim: 1,
            input_dim: 1,
            horizon: self.horizon,
            path_ineq: usize::from(self.input_bound.is_some()),
            path_eq: 0,
            term_ineq: 0,
            term_eq: 0,
        }
    }

    fn param_layout(&self) -> ParamLayout {
        ParamLayout::new(0, 1, 0)
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, self.x0)
    }

    fn dynamics<D: Scalar>(&self, x: &[D], u: &[D], _theta: &[D]) -> Vec<D> {
        vec![x[0] + u[0]]
    }

    fn stage_cost<D: Scalar>(&self, _t: usize, x: &[D], u: &[D], theta: &[D]) -> D {
        theta[0] * x[0] * x[0] + u[0] * u[0]
    }

    fn terminal_cost<D: Scalar>(&self, x: &[D], theta: &[D]) -> D {
        theta[0] * x[0] * x[0]
    }

    fn path_inequality<D: Scalar>(&self, _t: usize, _x: &[D], u: &[D], _theta: &[D]) -> Vec<D> {
        match self.input_bound {
            Some(b) => vec![-u[0] - b],
            None => Vec::new(),
        }
    }

    fn check_validity(&self, x: &[f64], _theta: &[f64]) -> Result<()> {
        if x[0].abs() > 1e6 {
            return Err(SocilError::Validity(format!("lqr-toy state {} outside |x| <= 1e6", x[0])));
        }
        Ok(())
    }

    fn constraint_families(&self) -> Vec<ConstraintFamily> {
        Vec::new()
    }
}
