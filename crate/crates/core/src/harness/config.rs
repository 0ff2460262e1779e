use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SocilError};
use crate::systems::{ArmSpec, CartpoleSpec, LqrToySpec, SystemKind};
use crate::trajopt::SolverSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Barrier-smoothed constraints in both the solve and the gradient.
    SafeOcil,
    /// Constraints dropped entirely.
    OcilBaseline,
}

impl std::str::FromStr for Mode {
    type Err = SocilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" | "safe_ocil" | "safe-ocil" => Ok(Mode::SafeOcil),
            "baseline" | "ocil_baseline" | "ocil-baseline" | "ocil" => Ok(Mode::OcilBaseline),
            other => Err(SocilError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Relative spread of the initial guess `θ̂_0 = θ*(1 + δ)` per partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub dyn_params: f64,
    pub obj_params: f64,
    pub cstr_params: f64,
    /// Draw constraint-bound perturbations from `[-spread, 0]` only.
    pub cstr_conservative: bool,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            dyn_params: 0.2,
            obj_params: 0.2,
            cstr_params: 0.0,
            cstr_conservative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub system: SystemKind,
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Overrides the true parameters implied by the system spec.
    pub theta_true: Option<Vec<f64>>,
    pub perturbation: Perturbation,
    /// Relative prior variance: `P_0 = p0 · diag(θ̂_0²)`.
    pub p0: f64,
    /// Lower bound on the measurement variance used in `R`.
    pub variance_floor: f64,
    /// The demonstration is solved at `(α, β) / demo_tightening`.
    pub demo_tightening: f64,
    /// In safe mode, clamp learned constraint bounds to at most their initial guess.
    pub bound_projection: bool,
    /// In safe mode, halve (α, β) and re-solve while the plan violates the
    /// estimated constraints, at most this many times per iteration.
    pub max_tightenings: usize,
    /// Skip the EKF update when the inner solve did not converge.
    pub skip_degraded: bool,
    /// Per-iteration factor applied to both α and β; 1 keeps them fixed.
    pub barrier_decay: f64,
    pub solver: SolverSettings,
    pub cartpole: CartpoleSpec,
    pub arm: ArmSpec,
    pub lqr_toy: LqrToySpec,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_system(SystemKind::Cartpole)
    }
}

impl RunConfig {
    /// Defaults tuned per benchmark.
    pub fn for_system(system: SystemKind) -> Self {
        // (α, β, iterations, p0, variance floor)
        let (alpha, beta, iterations, p0, variance_floor) = match system {
            SystemKind::Cartpole => (0.3, 0.075, 288, 0.01, 1.0),
            SystemKind::Arm => (0.08, 0.02, 208, 0.01, 1.0),
            SystemKind::LqrToy => (0.3, 0.075, 200, 1.0, 1e-2),
        };
        Self {
            system,
            mode: Mode::SafeOcil,
            alpha,
            beta,
            sigma: 0.0,
            seed: 0,
            iterations,
            theta_true: None,
            perturbation: Perturbation::default(),
            p0,
            variance_floor,
            demo_tightening: 10.0,
            bound_projection: true,
            max_tightenings: 6,
            skip_degraded: false,
            barrier_decay: 1.0,
            solver: SolverSettings::default(),
            cartpole: CartpoleSpec::default(),
            arm: ArmSpec::default(),
            lqr_toy: LqrToySpec::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SocilError::Config("iterations must be at least 1".into()));
        }
        crate::barrier::BarrierConfig::new(self.alpha, self.beta)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SocilError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        for (name, v) in [
            ("p0", self.p0),
            ("variance_floor", self.variance_floor),
            ("barrier_decay", self.barrier_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SocilError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.demo_tightening >= 1.0) {
            return Err(SocilError::Config("demo_tightening must be at least 1".into()));
        }
        let p = &self.perturbation;
        for v in [p.dyn_params, p.obj_params, p.cstr_params] {
            if !(0.0..1.0).contains(&v) {
                return Err(SocilError::Config(format!("perturbation spread must lie in [0, 1), got {v}")));
            }
        }
        self.solver.validate()?;
        match self.system {
            SystemKind::Cartpole => self.cartpole.validate(),
            SystemKind::Arm => self.arm.validate(),
            SystemKind::LqrToy => self.lqr_toy.validate(),
        }
    }

    /// Variance placed on the diagonal of `R`.
    pub fn measurement_variance(&self) -> f64 {
        (self.sigma * self.sigma).max(self.variance_floor)
    }

    /// Parse a bare config or the `config` entry of an exported manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let inner = match value.get("config") {
            Some(c) if c.is_object() => c.clone(),
            _ => value,
        };
        Ok(serde_json::from_value(inner)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SocilError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for kind in [SystemKind::Cartpole, SystemKind::Arm, SystemKind::LqrToy] {
            RunConfig::for_system(kind).validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip_and_manifest_unwrap() {
        let cfg = RunConfig {
            sigma: 0.3,
            seed: 9,
            ..RunConfig::for_system(SystemKind::Arm)
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let manifest = format!("{{\"version\": \"x\", \"config\": {text}}}");
        assert_eq!(RunConfig::from_json(&manifest).unwrap(), cfg);
        // partial documents fall back to defaults
        let partial = RunConfig::from_json("{\"seed\": 4}").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.system, SystemKind::Cartpole);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.alpha = -1.0;
        assert!(cfg.validate().is_err());
        assert!("fast".parse::<Mode>().is_err());
        assert_eq!("baseline".parse::<Mode>().unwrap(), Mode::OcilBaseline);
    }
}
