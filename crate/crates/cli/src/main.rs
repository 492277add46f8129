use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kickmap::bessel::{KickKernel, DEFAULT_TAIL_TOL};
use kickmap::error::Error;
use kickmap::harness::{
    compare_regimes, comparison_csv, load_bundle, run_experiment, run_sweep, write_atomic, write_bundle,
    ExperimentConfig, RunBundle, SweepPlan,
};
use kickmap::observables::Regime;

const OUTPUT_ENV: &str = "KICKMAP_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "kickmap-output";

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "kickmap", version, about = "Simulate periodically kicked quantum and classical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write series.csv, final_state.csv and summary.json
    Run(RunArgs),
    /// Run every cell of a parameter grid
    Sweep(SweepArgs),
    /// Compare result directories that share K and T
    Compare(CompareArgs),
    /// Check a config (or, with --sweep, a sweep plan) without running it
    ValidateConfig(ValidateArgs),
    /// Print kernel diagnostics for a kick strength
    BesselCheck(BesselArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    steps: Option<u64>,
    /// Kick strength K
    #[arg(long = "k")]
    kick_strength: Option<f64>,
    /// Kick period T
    #[arg(long = "t")]
    period: Option<f64>,
    #[arg(long)]
    meas_period: Option<u64>,
    /// Classical points, trajectories or phase realizations
    #[arg(long)]
    ensemble: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.regime {
            c.regime = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.kick_strength {
            c.kick_strength = v;
        }
        if let Some(v) = self.period {
            c.period = v;
        }
        if let Some(v) = self.meas_period {
            c.meas_period = v;
        }
        if let Some(v) = self.ensemble {
            c.ensemble = Some(v);
        }
        if let Some(v) = self.stride {
            c.stride = Some(v);
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON sweep plan
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed used to derive per-cell seeds
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Result directories written by `run`
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    path: PathBuf,
    /// Treat the file as a sweep plan
    #[arg(long)]
    sweep: bool,
}

#[derive(Debug, Args)]
struct BesselArgs {
    #[arg(long = "k")]
    kick_strength: f64,
    #[arg(long, default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
}

enum Failure {
    Dynamics(Error),
    Partial(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Dynamics(e)
    }
}

fn output_dir(flag: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    flag.or(configured)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

fn headline(bundle: &RunBundle) -> String {
    let a = &bundle.analysis;
    let mut parts = vec![format!("regime {}", bundle.regime()), format!("{} rows", bundle.series.entries.len())];
    if let Some(d) = &a.diffusion.value {
        parts.push(format!("B_est {:.6} +/- {:.2e} (K^2/4T = {})", d.b_est, d.stderr, a.theory_b));
    }
    if let Some(bt) = &a.break_time.value {
        match bt.t_star() {
            Some(t) => parts.push(format!("t* {t}")),
            None => parts.push("no suppression".into()),
        }
    }
    if let Some(l) = &a.localization.value {
        parts.push(format!("ell {:.3}", l.ell));
    }
    parts.join(", ")
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    args.overrides.apply(&mut config);
    config.validate()?;
    let out = output_dir(args.out.as_deref(), config.output.dir.as_deref());
    let bundle = run_experiment(&config)?;
    write_bundle(&bundle, &out)?;
    println!("{}: {}", out.display(), headline(&bundle));
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut plan = SweepPlan::load(&args.plan)?;
    if let Some(seed) = args.seed {
        plan.base.seed = seed;
    }
    if args.concurrency.is_some() {
        plan.concurrency = args.concurrency;
    }
    plan.validate()?;
    let out = output_dir(args.out.as_deref(), plan.base.output.dir.as_deref());
    println!("sweep: {} cells", plan.cell_count());
    let report = run_sweep(&plan, Some(&out))?;
    println!("{}: {} cells, {} failed", out.join("sweep.csv").display(), report.cells, report.failures.len());
    for f in &report.failures {
        eprintln!("cell {}: {}", f.cell, f.error);
    }
    if report.is_complete() {
        Ok(())
    } else {
        Err(Failure::Partial(report.failures.len()))
    }
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let bundles = args
        .dirs
        .iter()
        .map(|d| load_bundle(d).map_err(|e| e.context(d.display().to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let comparison = compare_regimes(&bundles)?;
    let out = output_dir(args.out.as_deref(), None);
    write_atomic(&out.join("comparison.csv"), &comparison_csv(&comparison)?)?;
    let mut json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    json.push('\n');
    write_atomic(&out.join("comparison.json"), json.as_bytes())?;
    println!("{}", serde_json::to_string_pretty(&comparison.ratios).expect("ratios serialize"));
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    if args.sweep {
        let plan = SweepPlan::load(&args.path)?;
        println!("{}: valid sweep plan with {} cells", args.path.display(), plan.cell_count());
    } else {
        let config = ExperimentConfig::load(&args.path)?;
        println!("{}: valid {} config", args.path.display(), config.regime);
    }
    Ok(())
}

fn bessel_check(args: BesselArgs) -> Result<(), Failure> {
    let kernel = KickKernel::build(args.kick_strength, args.tail_tol)?;
    println!("{}", serde_json::to_string_pretty(&kernel.diagnostics()).expect("diagnostics serialize"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::ValidateConfig(a) => validate(a),
        Command::BesselCheck(a) => bessel_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(n)) => {
            eprintln!("error: {n} sweep cells failed");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Dynamics(e)) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
