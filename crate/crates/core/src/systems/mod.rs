//! Benchmark systems, RK4 discretisation and the seeded measurement generator.

pub mod arm;
pub mod cartpole;
pub mod lqr_toy;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SocilError};
use crate::estimator::MeasurementModel;
use crate::ocp::Scalar;

pub use arm::{ArmSpec, TwoLinkArm};
pub use cartpole::{Cartpole, CartpoleSpec};
pub use lqr_toy::{LqrToy, LqrToySpec};

/// One classical Runge–Kutta step of `ẋ = f(x, u, θ)`, generic over the scalar.
pub fn rk4<D, F>(f: F, x: &[D], u: &[D], theta: &[D], dt: f64) -> Vec<D>
where
    D: Scalar,
    F: Fn(&[D], &[D], &[D]) -> Vec<D>,
{
    let shifted = |k: &[D], scale: f64| -> Vec<D> { x.iter().zip(k).map(|(&xi, &ki)| xi + ki * scale).collect() };
    let k1 = f(x, u, theta);
    let k2 = f(&shifted(&k1, 0.5 * dt), u, theta);
    let k3 = f(&shifted(&k2, 0.5 * dt), u, theta);
    let k4 = f(&shifted(&k3, dt), u, theta);
    (0..x.len())
        .map(|i| x[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0))
        .collect()
}

/// Checked RK4 step on plain floats.
pub fn rk4_step<F>(f: F, x: &[f64], u: &[f64], theta: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64], &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SocilError::Config(format!("time step must be positive, got {dt}")));
    }
    let next = rk4(f, x, u, theta, dt);
    match next.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SocilError::NonFinite {
            what: "integrated state",
            t: 0,
            index,
        }),
        None => Ok(next),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(SocilError::Config(format!("noise sigma must be non-negative, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    /// `len` standard-normal draws scaled by σ, from the stream keyed by `(seed, t)`.
    pub fn sample(&self, t: u64, len: usize) -> DVector<f64> {
        if self.sigma == 0.0 {
            return DVector::zeros(len);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(t);
        DVector::from_fn(len, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            self.sigma * z
        })
    }
}

/// `y_t* = z(ξ_t) + v_t` with `v_t ~ N(0, σ² I)`.
pub fn measure(xi_t: &DVector<f64>, model: &MeasurementModel, noise: &NoiseConfig, t: usize) -> Result<DVector<f64>> {
    let clean = model.observe(xi_t)?;
    let v = noise.sample(t as u64, clean.len());
    Ok(clean + v)
}

/// Selector for the built-in benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Cartpole,
    Arm,
    LqrToy,
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Cartpole => "cartpole",
            SystemKind::Arm => "arm",
            SystemKind::LqrToy => "lqr-toy",
        }
    }

    /// Observation interval of one discrete step in milliseconds.
    pub fn interval_ms(&self) -> f64 {
        match self {
            SystemKind::Cartpole => 100.0,
            SystemKind::Arm => 200.0,
            SystemKind::LqrToy => 100.0,
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = SocilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" | "cart-pole" => Ok(SystemKind::Cartpole),
            "arm" | "two-link-arm" => Ok(SystemKind::Arm),
            "lqr-toy" | "lqr_toy" | "lqr" => Ok(SystemKind::LqrToy),
            other => Err(SocilError::Config(format!("unknown system `{other}`"))),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SocilError::Config(format!("{what} must be positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(x: &[f64], _u: &[f64], _th: &[f64]) -> Vec<f64> {
        vec![-x[0]]
    }

    #[test]
    fn rk4_examples() {
        let still = rk4_step(|_x: &[f64], _u: &[f64], _t: &[f64]| vec![0.0, 0.0], &[1.5, -2.0], &[], &[], 0.3).unwrap();
        assert_eq!(still, vec![1.5, -2.0]);

        let x = rk4_step(decay, &[1.0], &[], &[], 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);

        let ramp = rk4_step(|_x: &[f64], u: &[f64], _t: &[f64]| vec![u[0]], &[0.0], &[2.0], &[], 0.5).unwrap();
        assert_eq!(ramp[0], 1.0);

        assert!(rk4_step(decay, &[1.0], &[], &[], 0.0).is_err());
        assert!(rk4_step(|_x: &[f64], _u: &[f64], _t: &[f64]| vec![f64::NAN], &[1.0], &[], &[], 0.1).is_err());
    }

    #[test]
    fn noise_streams_are_replayable() {
        let noise = NoiseConfig::new(0.3, 42).unwrap();
        assert_eq!(noise.sample(7, 4), noise.sample(7, 4));
        assert_ne!(noise.sample(7, 4), noise.sample(8, 4));
        let quiet = NoiseConfig::new(0.0, 42).unwrap();
        assert_eq!(quiet.sample(3, 2), DVector::zeros(2));
        assert!(NoiseConfig::new(-1.0, 0).is_err());
    }

    #[test]
    fn measure_adds_nothing_without_noise() {
        let model = MeasurementModel::state_identity(2, 1, 0.01).unwrap();
        let xi = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let y = measure(&xi, &model, &NoiseConfig::new(0.0, 1).unwrap(), 5).unwrap();
        assert_eq!(y, DVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn sample_variance_matches_sigma() {
        let noise = NoiseConfig::new(0.3, 2024).unwrap();
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|t| noise.sample(t, 1)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((0.0885..=0.0915).contains(&var), "variance {var}");
    }

    #[test]
    fn system_names_round_trip() {
        for kind in [SystemKind::Cartpole, SystemKind::Arm, SystemKind::LqrToy] {
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
        }
        assert!("pendulum".parse::<SystemKind>().is_err());
    }
}
