use serde::{Deserialize, Serialize};

use crate::error::{Result, SocilError};
use crate::ocp::{evaluate_constraints, ControlProblem, ParamVector, Trajectory};

/// Values of `g` at or below this count as satisfied.
pub const VIOLATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyViolation {
    pub name: String,
    /// Share of timesteps with some `g > slack`, in percent.
    pub pct_violation: f64,
    /// Worst excursion as a percentage of the bound.
    pub max_violation: f64,
    pub violating_steps: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub families: Vec<FamilyViolation>,
}

impl ViolationReport {
    pub fn family(&self, name: &str) -> Option<&FamilyViolation> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn is_clean(&self) -> bool {
        self.families.iter().all(|f| f.violating_steps == 0)
    }

    /// Mean percentage and worst excursion over several executed trajectories.
    pub fn aggregate(reports: &[ViolationReport]) -> ViolationReport {
        let Some(first) = reports.first() else {
            return ViolationReport::default();
        };
        let families = first
            .families
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let all = reports.iter().map(|r| &r.families[k]);
                let violating_steps = all.clone().map(|g| g.violating_steps).sum();
                let steps = all.clone().map(|g| g.steps).sum();
                FamilyViolation {
                    name: f.name.clone(),
                    pct_violation: all.clone().map(|g| g.pct_violation).sum::<f64>() / reports.len() as f64,
                    max_violation: all.map(|g| g.max_violation).fold(0.0, f64::max),
                    violating_steps,
                    steps,
                }
            })
            .collect();
        ViolationReport { families }
    }
}

/// Violations of `traj` against the true bounds `true_cstr`, with the remaining
/// parameters taken from `theta`.
pub fn violation_metrics<P: ControlProblem>(
    traj: &Trajectory,
    problem: &P,
    theta: &ParamVector,
    true_cstr: &[f64],
) -> Result<ViolationReport> {
    let theta = theta.with_cstr(true_cstr)?;
    let values = evaluate_constraints(problem, traj, &theta)?;
    let horizon = traj.horizon();
    let mut families = Vec::new();
    for fam in problem.constraint_families() {
        let bound = true_cstr[fam.bound_param];
        if bound == 0.0 || !bound.is_finite() {
            return Err(SocilError::Config(format!("constraint family `{}` has bound {bound}", fam.name)));
        }
        let mut worst = 0.0f64;
        let mut violating = 0;
        let mut steps = 0;
        let mut visit = |g: &[f64]| {
            steps += 1;
            let m = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m > VIOLATION_SLACK {
                violating += 1;
                worst = worst.max(m);
            }
        };
        if !fam.path.is_empty() {
            for g in &values.path_ineq[..horizon] {
                let sel: Vec<f64> = fam.path.iter().map(|&i| g[i]).collect();
                visit(&sel);
            }
        }
        if !fam.terminal.is_empty() {
            let sel: Vec<f64> = fam.terminal.iter().map(|&i| values.term_ineq[i]).collect();
            visit(&sel);
        }
        families.push(FamilyViolation {
            name: fam.name,
            pct_violation: if steps == 0 { 0.0 } else { 100.0 * violating as f64 / steps as f64 },
            max_violation: 100.0 * worst / bound.abs(),
            violating_steps: violating,
            steps,
        });
    }
    Ok(ViolationReport { families })
}

/// Median of each trailing window of `width` values, one per index from `width - 1`.
pub fn windowed_median(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 || values.len() < width {
        return Vec::new();
    }
    values
        .windows(width)
        .map(|w| {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            let k = s.len() / 2;
            if s.len() % 2 == 1 {
                s[k]
            } else {
                0.5 * (s[k - 1] + s[k])
            }
        })
        .collect()
}
