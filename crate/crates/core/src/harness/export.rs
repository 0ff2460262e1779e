use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::metrics::{windowed_median, ViolationReport};
use super::run::RunLog;
use crate::error::{Result, SocilError};
use crate::ocp::Trajectory;

/// Trailing window for the smoothed loss column of `plotdata_loss.csv`.
pub const LOSS_WINDOW: usize = 20;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_file(path: PathBuf, body: String) -> Result<()> {
    fs::write(&path, body).map_err(|source| SocilError::Io { path, source })
}

pub fn manifest(log: &RunLog) -> serde_json::Value {
    json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": log.config,
        "seeds": { "noise": log.config.seed, "initial_guess": log.config.seed },
        "theta_true": log.theta_true,
        "theta_init": log.theta_init,
        "theta_final": log.final_theta(),
        "iterations_completed": log.records.len(),
        "aborted": log.aborted,
        "violations": log.violations,
    })
}

pub fn iterations_csv(log: &RunLog) -> String {
    let p = log.theta_true.len();
    let mut out = String::from("iter,loss");
    for i in 0..p {
        let _ = write!(out, ",theta_{i}");
    }
    out.push_str(",ms_total,ms_gradient,stationarity,degraded\n");
    for r in &log.records {
        let _ = write!(out, "{},{}", r.iter, num(r.loss));
        for v in &r.theta {
            let _ = write!(out, ",{}", num(*v));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            num(r.ms_total),
            num(r.ms_gradient),
            num(r.stationarity),
            u8::from(r.degraded)
        );
    }
    out
}

fn violation_rows(out: &mut String, label: &str, report: &ViolationReport) {
    for f in &report.families {
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{}",
            f.name,
            num(f.pct_violation),
            num(f.max_violation),
            f.violating_steps,
            f.steps
        );
    }
}

/// One row per family and iteration, then the run aggregate under `all`.
pub fn violations_csv(log: &RunLog) -> String {
    let mut out = String::from("iter,family,pct_violation,max_violation,violating_steps,steps\n");
    for r in &log.records {
        violation_rows(&mut out, &r.iter.to_string(), &r.violations);
    }
    violation_rows(&mut out, "all", &log.violations);
    out
}

pub fn trajectory_csv(log: &RunLog) -> String {
    log.final_trajectory.as_ref().map_or_else(|| String::from("t\n"), trajectory_table)
}

/// The terminal row leaves the input columns empty.
pub fn trajectory_table(traj: &Trajectory) -> String {
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    for i in 0..n {
        let _ = write!(out, ",x_{i}");
    }
    for j in 0..m {
        let _ = write!(out, ",u_{j}");
    }
    out.push('\n');
    for (t, x) in traj.states.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in x.iter() {
            let _ = write!(out, ",{}", num(*v));
        }
        match traj.inputs.get(t) {
            Some(u) => {
                for v in u.iter() {
                    let _ = write!(out, ",{}", num(*v));
                }
            }
            None => out.push_str(&",".repeat(m)),
        }
        out.push('\n');
    }
    out
}

/// Raw loss plus its trailing-window median (empty until the window fills).
pub fn loss_plot_csv(log: &RunLog) -> String {
    let losses = log.losses();
    let smooth = windowed_median(&losses, LOSS_WINDOW);
    let mut out = String::from("iter,loss,loss_median\n");
    for (k, l) in losses.iter().enumerate() {
        let med = (k + 1)
            .checked_sub(LOSS_WINDOW)
            .and_then(|i| smooth.get(i))
            .map_or(String::new(), |v| num(*v));
        let _ = writeln!(out, "{k},{},{med}", num(*l));
    }
    out
}

/// Write the manifest and every CSV of `log` into `dir`, creating it if needed.
pub fn export(log: &RunLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| SocilError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = serde_json::to_string_pretty(&manifest(log))?;
    write_file(dir.join("manifest.json"), manifest + "\n")?;
    write_file(dir.join("iterations.csv"), iterations_csv(log))?;
    write_file(dir.join("violations.csv"), violations_csv(log))?;
    write_file(dir.join("trajectory_final.csv"), trajectory_csv(log))?;
    write_file(dir.join("plotdata_loss.csv"), loss_plot_csv(log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_online, RunConfig};
    use crate::systems::SystemKind;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn single_iteration_export_has_one_row() {
        let cfg = RunConfig {
            iterations: 1,
            ..RunConfig::for_system(SystemKind::LqrToy)
        };
        let log = run_online(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(&log, dir.path()).unwrap();
        for f in [
            "manifest.json",
            "iterations.csv",
            "violations.csv",
            "trajectory_final.csv",
            "plotdata_loss.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let iters = fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
        let lines: Vec<&str> = iters.lines().collect();
        assert_eq!(lines[0], "iter,loss,theta_0,ms_total,ms_gradient,stationarity,degraded");
        assert_eq!(lines.len(), 2);
        let traj = fs::read_to_string(dir.path().join("trajectory_final.csv")).unwrap();
        assert_eq!(traj.lines().next().unwrap(), "t,x_0,u_0");
        assert_eq!(traj.lines().count(), 3);
    }

    #[test]
    fn manifest_reloads_to_the_same_config() {
        let cfg = RunConfig {
            iterations: 3,
            sigma: 0.2,
            seed: 17,
            ..RunConfig::for_system(SystemKind::LqrToy)
        };
        let log = run_online(&cfg).unwrap();
        let text = serde_json::to_string(&manifest(&log)).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unwritable_directory_reports_the_path() {
        let cfg = RunConfig {
            iterations: 1,
            ..RunConfig::for_system(SystemKind::LqrToy)
        };
        let log = run_online(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        match export(&log, &blocker.join("sub")) {
            Err(SocilError::Io { path, .. }) => assert!(path.starts_with(&blocker)),
            other => panic!("expected an I/O error, got {other:?}"),
        }
    }
}
