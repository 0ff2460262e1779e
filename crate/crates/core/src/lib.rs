//! Safe online control-informed learning.
//!
//! A parametric constrained optimal-control problem is smoothed with a
//! softplus barrier, solved by iterative LQR, differentiated with respect to
//! its parameters, and the parameters are tracked online by an EKF from noisy
//! observations of a demonstration.

pub mod barrier;
pub mod clock;
pub mod derivatives;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod ocp;
pub mod pdp;
pub mod systems;
pub mod trajopt;

pub use error::{Result, SocilError};
