//! End-to-end online learning runs, metrics, export and oracle checks.

pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod validate;

pub use export::export;
pub use config::{Mode, Perturbation, RunConfig};

pub use metrics::{violation_metrics, windowed_median, FamilyViolation, ViolationReport};
pub use run::{generate_demonstration, run_online, sweep, Demonstration, IterationRecord, RunLog};
