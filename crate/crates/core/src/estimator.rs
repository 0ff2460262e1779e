//! Measurement/loss model and the EKF-style online parameter update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SocilError};
use crate::ocp::{ParamVector, Trajectory};
use crate::pdp::TrajectoryJacobian;

/// Jitter added once to a numerically singular innovation covariance.
pub const INNOVATION_JITTER: f64 = 1e-9;
/// Smallest eigenvalue kept in the parameter covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

/// Linear measurement `z(ξ_t) = H ξ_t` with noise covariance `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    /// `r × (n + m)`
    pub map: DMatrix<f64>,
    /// `r × r`, symmetric positive definite.
    pub noise_cov: DMatrix<f64>,
}

impl MeasurementModel {
    pub fn new(map: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let r = map.nrows();
        if noise_cov.shape() != (r, r) {
            return Err(SocilError::Dimension {
                what: "measurement noise covariance",
                expected: r,
                got: noise_cov.nrows(),
                index: 0,
            });
        }
        if (&noise_cov - noise_cov.transpose()).amax() > 1e-12 * noise_cov.amax().max(1.0) {
            return Err(SocilError::Config("measurement noise covariance must be symmetric".into()));
        }
        let min_eig = noise_cov.clone().symmetric_eigenvalues().min();
        if !(min_eig >= COVARIANCE_FLOOR) {
            return Err(SocilError::Config(format!(
                "measurement noise covariance must be positive definite, smallest eigenvalue {min_eig}"
            )));
        }
        Ok(Self { map, noise_cov })
    }

    /// `z` reads the state part of `ξ_t = (x_t, u_t)`; `R = variance · I`.
    pub fn state_identity(n: usize, m: usize, variance: f64) -> Result<Self> {
        let mut map = DMatrix::zeros(n, n + m);
        map.view_mut((0, 0), (n, n)).fill_with_identity();
        Self::new(map, DMatrix::identity(n, n) * variance)
    }

    pub fn output_dim(&self) -> usize {
        self.map.nrows()
    }

    pub fn observe(&self, xi_t: &DVector<f64>) -> Result<DVector<f64>> {
        if xi_t.len() != self.map.ncols() {
            return Err(SocilError::Dimension {
                what: "stage vector",
                expected: self.map.ncols(),
                got: xi_t.len(),
                index: 0,
            });
        }
        Ok(&self.map * xi_t)
    }

    /// `∂z/∂ξ_t`, constant for a linear map.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.map
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: ParamVector,
    pub cov: DMatrix<f64>,
    pub step: usize,
}

impl EstimatorState {
    /// `P_0 = p0 · I`.
    pub fn new(theta_hat: ParamVector, p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0.is_finite()) {
            return Err(SocilError::Config(format!("initial covariance scale must be positive, got {p0}")));
        }
        let p = theta_hat.len();
        Ok(Self {
            theta_hat,
            cov: DMatrix::identity(p, p) * p0,
            step: 0,
        })
    }

    /// Start from an explicit prior covariance, which must be symmetric positive definite.
    pub fn with_covariance(theta_hat: ParamVector, cov: DMatrix<f64>) -> Result<Self> {
        let p = theta_hat.len();
        if cov.shape() != (p, p) {
            return Err(SocilError::Dimension {
                what: "prior covariance",
                expected: p * p,
                got: cov.nrows() * cov.ncols(),
                index: 0,
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) || cov.clone().cholesky().is_none() {
            return Err(SocilError::Config("prior covariance must be symmetric positive definite".into()));
        }
        Ok(Self { theta_hat, cov, step: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfStepReport {
    /// `p × r`
    pub kalman_gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    /// `r × p`
    pub l_t: DMatrix<f64>,
    pub stage_loss_norm: f64,
    pub degraded: bool,
}

/// `l(ξ_t, y*) = y* − z(ξ_t)`.
pub fn stage_loss(xi_t: &DVector<f64>, y_star: &DVector<f64>, model: &MeasurementModel) -> Result<DVector<f64>> {
    let z = model.observe(xi_t)?;
    if y_star.len() != z.len() {
        return Err(SocilError::Dimension {
            what: "measurement",
            expected: z.len(),
            got: y_star.len(),
            index: 0,
        });
    }
    Ok(y_star - z)
}

/// `Σ_t ‖l(ξ_t, y_t*)‖²` over `t = 0..=T`.
pub fn cumulative_loss(traj: &Trajectory, measurements: &[DVector<f64>], model: &MeasurementModel) -> Result<f64> {
    let stages = traj.horizon() + 1;
    if measurements.len() != stages {
        return Err(SocilError::Dimension {
            what: "measurement count",
            expected: stages,
            got: measurements.len(),
            index: 0,
        });
    }
    let mut total = 0.0;
    for (t, y) in measurements.iter().enumerate() {
        total += stage_loss(&traj.stage(t), y, model)?.norm_squared();
    }
    Ok(total)
}

/// `L_t = −(∂z/∂ξ_t) [X_t; U_t]`, shape `r × p`.
pub fn stage_jacobian(t: usize, jac: &TrajectoryJacobian, model: &MeasurementModel) -> Result<DMatrix<f64>> {
    if t > jac.horizon() {
        return Err(SocilError::Dimension {
            what: "stage index",
            expected: jac.horizon(),
            got: t,
            index: t,
        });
    }
    let stacked = jac.stage(t);
    if stacked.nrows() != model.map.ncols() {
        return Err(SocilError::Dimension {
            what: "measurement map columns",
            expected: stacked.nrows(),
            got: model.map.ncols(),
            index: t,
        });
    }
    Ok(-(&model.map * stacked))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Symmetrize and clamp eigenvalues from below at [`COVARIANCE_FLOOR`].
fn enforce_spd(mut p: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut p);
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= COVARIANCE_FLOOR {
        return p;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(COVARIANCE_FLOOR));
    let mut rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut rebuilt);
    rebuilt
}

/// One update `K = P Lᵀ(L P Lᵀ + R)⁻¹`, `P⁺ = (I − K L) P`, `θ̂⁺ = θ̂ − K (y* − z)`.
pub fn ekf_step(
    state: &EstimatorState,
    l_t: &DMatrix<f64>,
    innovation: &DVector<f64>,
    model: &MeasurementModel,
    degraded: bool,
) -> Result<(EstimatorState, EkfStepReport)> {
    let p = state.theta_hat.len();
    let r = model.output_dim();
    if l_t.shape() != (r, p) {
        return Err(SocilError::Dimension {
            what: "stage-loss Jacobian",
            expected: r * p,
            got: l_t.nrows() * l_t.ncols(),
            index: state.step,
        });
    }
    if innovation.len() != r {
        return Err(SocilError::Dimension {
            what: "innovation",
            expected: r,
            got: innovation.len(),
            index: state.step,
        });
    }

    // prediction leaves θ̂ and P unchanged
    let pl = &state.cov * l_t.transpose();
    let mut s = l_t * &pl + &model.noise_cov;
    symmetrize(&mut s);
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            let jittered = s + DMatrix::identity(r, r) * INNOVATION_JITTER;
            jittered.cholesky().ok_or(SocilError::Singular {
                what: "innovation covariance",
                t: state.step,
            })?
        }
    };
    // K = P Lᵀ S⁻¹ via Sᵀ Kᵀ = L P
    let gain = chol.solve(&pl.transpose()).transpose();
    let cov = enforce_spd(&state.cov - &gain * l_t * &state.cov);
    let values = state.theta_hat.values() - &gain * innovation;
    let theta_hat = state.theta_hat.with_values(values)?;

    let report = EkfStepReport {
        kalman_gain: gain,
        innovation: innovation.clone(),
        l_t: l_t.clone(),
        stage_loss_norm: innovation.norm(),
        degraded,
    };
    Ok((
        EstimatorState {
            theta_hat,
            cov,
            step: state.step + 1,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::ParamLayout;

    fn scalar_state(theta: f64, p: f64) -> EstimatorState {
        let theta_hat = ParamVector::from_parts(&[], &[theta], &[]).unwrap();
        EstimatorState::new(theta_hat, p).unwrap()
    }

    #[test]
    fn stage_loss_examples() {
        let model = MeasurementModel::state_identity(2, 1, 1.0).unwrap();
        let xi = DVector::from_vec(vec![1.0, 2.0, 9.0]);
        let l = stage_loss(&xi, &DVector::from_vec(vec![1.5, 2.0]), &model).unwrap();
        assert_eq!(l, DVector::from_vec(vec![0.5, 0.0]));
        let zero = stage_loss(&xi, &DVector::from_vec(vec![1.0, 2.0]), &model).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn cumulative_loss_examples() {
        let model = MeasurementModel::state_identity(1, 1, 1.0).unwrap();
        let traj = Trajectory {
            states: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)],
            inputs: vec![DVector::from_element(1, -0.5)],
            rolled_out: true,
        };
        let perfect = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)];
        assert_eq!(cumulative_loss(&traj, &perfect, &model).unwrap(), 0.0);
        let off = vec![DVector::from_element(1, 1.5), DVector::from_element(1, 0.5)];
        assert_eq!(cumulative_loss(&traj, &off, &model).unwrap(), 0.25);
        assert!(cumulative_loss(&traj, &perfect[..1], &model).is_err());
    }

    #[test]
    fn scalar_update_matches_hand_values() {
        let model = MeasurementModel::state_identity(1, 0, 1.0).unwrap();
        let state = scalar_state(2.0, 1.0);
        let l = DMatrix::from_element(1, 1, 1.0);
        let (next, rep) = ekf_step(&state, &l, &DVector::from_element(1, 1.0), &model, false).unwrap();
        assert!((rep.kalman_gain[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((next.cov[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((next.theta_hat.as_slice()[0] - 1.5).abs() < 1e-12);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn zero_jacobian_changes_nothing() {
        let model = MeasurementModel::state_identity(1, 0, 1.0).unwrap();
        let state = scalar_state(2.0, 0.7);
        let l = DMatrix::zeros(1, 1);
        let (next, rep) = ekf_step(&state, &l, &DVector::from_element(1, 3.0), &model, false).unwrap();
        assert_eq!(rep.kalman_gain[(0, 0)], 0.0);
        assert_eq!(next.cov, state.cov);
        assert_eq!(next.theta_hat, state.theta_hat);
    }

    #[test]
    fn two_by_one_update_matches_hand_values() {
        let model = MeasurementModel::state_identity(1, 0, 1.0).unwrap();
        let theta_hat = ParamVector::new(ParamLayout::new(1, 1, 0), vec![0.0, 0.0]).unwrap();
        let state = EstimatorState::new(theta_hat, 1.0).unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let (next, rep) = ekf_step(&state, &l, &DVector::from_element(1, 0.0), &model, false).unwrap();
        assert!((rep.kalman_gain[(0, 0)] - 1.0 / 6.0).abs() < 1e-15);
        assert!((rep.kalman_gain[(1, 0)] - 2.0 / 6.0).abs() < 1e-15);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0 - 1.0 / 6.0, -2.0 / 6.0, -2.0 / 6.0, 1.0 - 4.0 / 6.0]);
        assert!((next.cov - expected).amax() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let model = MeasurementModel::state_identity(1, 0, 1.0).unwrap();
        let state = scalar_state(1.0, 1.0);
        assert!(ekf_step(&state, &DMatrix::zeros(2, 1), &DVector::zeros(1), &model, false).is_err());
        assert!(ekf_step(&state, &DMatrix::zeros(1, 1), &DVector::zeros(2), &model, false).is_err());
        assert!(MeasurementModel::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3)).is_err());
        assert!(MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).is_err());
        assert!(EstimatorState::new(state.theta_hat.clone(), 0.0).is_err());
    }
}
