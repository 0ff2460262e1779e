use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use socil_core::harness::export::{self, trajectory_table};
use socil_core::harness::validate::{self, Check};
use socil_core::harness::{self, Mode, RunConfig, RunLog};
use socil_core::systems::SystemKind;
use socil_core::SocilError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "socil", version, about = "Safe online control-informed learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One online learning run.
    Run(RunArgs),
    /// Independent runs with seeds `seed, seed + 1, ...`.
    Sweep {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Gradient, estimator and barrier oracle suites.
    Validate,
    /// Generate the demonstration only.
    Demo(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config (or an exported manifest.json); flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<SystemKind>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory for the manifest and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, SocilError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut cfg = RunConfig::load(path)?;
                if let Some(system) = self.system {
                    cfg.system = system;
                }
                cfg
            }
            None => RunConfig::for_system(self.system.unwrap_or(SystemKind::Cartpole)),
        };
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.iters {
            cfg.iterations = v;
        }
        if self.out.is_some() {
            cfg.out_dir.clone_from(&self.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn median(values: &[f64]) -> f64 {
    harness::windowed_median(values, values.len()).first().copied().unwrap_or(f64::NAN)
}

fn violation_cells(log: &RunLog) -> String {
    log.violations
        .families
        .iter()
        .map(|f| format!("{} {:.1}% max {:.1}%", f.name, f.pct_violation, f.max_violation))
        .collect::<Vec<_>>()
        .join(", ")
}

fn summarize(log: &RunLog) {
    let losses = log.losses();
    let ms: Vec<f64> = log.records.iter().map(|r| r.ms_total).collect();
    let grad: Vec<f64> = log.records.iter().map(|r| r.ms_gradient).collect();
    let degraded = log.records.iter().filter(|r| r.degraded).count();
    println!("system      {} ({:?})", log.config.system, log.config.mode);
    println!("iterations  {} ({degraded} degraded)", log.records.len());
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("loss        {first:.3e} -> {last:.3e}");
    }
    println!("median ms   {:.1} total, {:.1} gradient", median(&ms), median(&grad));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    println!("theta true  {}", fmt(&log.theta_true));
    println!("theta final {}", fmt(log.final_theta()));
    if !log.violations.families.is_empty() {
        println!("violations  {}", violation_cells(log));
    }
    if let Some(reason) = &log.aborted {
        println!("aborted     {reason}");
    }
}

fn write_out(log: &RunLog, dir: Option<&PathBuf>) -> Result<(), SocilError> {
    if let Some(dir) = dir {
        harness::export(log, dir)?;
        println!("wrote       {}", dir.display());
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<u8, SocilError> {
    let cfg = args.resolve()?;
    let log = harness::run_online(&cfg)?;
    summarize(&log);
    write_out(&log, cfg.out_dir.as_ref())?;
    Ok(if log.aborted.is_some() { EXIT_ABORT } else { 0 })
}

fn sweep(trials: usize, args: &RunArgs) -> Result<u8, SocilError> {
    let cfg = args.resolve()?;
    let mut code = 0;
    println!("{:>6} {:>12} {:>12}  violations", "seed", "first loss", "last loss");
    for (seed, result) in harness::sweep(&cfg, trials) {
        match result {
            Ok(log) => {
                let losses = log.losses();
                println!(
                    "{seed:>6} {:>12.3e} {:>12.3e}  {}{}",
                    losses.first().copied().unwrap_or(f64::NAN),
                    losses.last().copied().unwrap_or(f64::NAN),
                    violation_cells(&log),
                    log.aborted.as_deref().map(|r| format!("  aborted: {r}")).unwrap_or_default()
                );
                if log.aborted.is_some() {
                    code = EXIT_ABORT;
                }
                write_out(&log, cfg.out_dir.as_ref().map(|d| d.join(format!("seed_{seed}"))).as_ref())?;
            }
            Err(e) => {
                println!("{seed:>6}  error: {e}");
                code = EXIT_ABORT;
            }
        }
    }
    Ok(code)
}

fn demo(args: &RunArgs) -> Result<u8, SocilError> {
    let cfg = args.resolve()?;
    let demo = harness::generate_demonstration(&cfg)?;
    println!("system          {}", cfg.system);
    println!("horizon         {}", demo.trajectory.horizon());
    println!("max inequality  {:.3e}", demo.max_inequality);
    match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| SocilError::Io {
                path: dir.clone(),
                source,
            })?;
            export::write_file(dir.join("demonstration.csv"), trajectory_table(&demo.trajectory))?;
            println!("wrote           {}", dir.display());
        }
        None => print!("{}", trajectory_table(&demo.trajectory)),
    }
    Ok(0)
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!(
            "{} {:<10} {:<48} {:.3e} (limit {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.threshold
        );
    }
}

fn validate_all() -> Result<u8, SocilError> {
    let checks = validate::run_all()?;
    print_checks(&checks);
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_VALIDATION })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep { trials, run } => sweep(*trials, run),
        Command::Validate => validate_all(),
        Command::Demo(args) => demo(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                SocilError::Config(_) | SocilError::Infeasible(_) => EXIT_VALIDATION,
                _ => EXIT_ABORT,
            })
        }
    }
}
