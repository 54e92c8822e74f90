use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use specreg::experiments::{run_experiment, ExperimentConfig};
use specreg::filters::{check_assumption_sr, FilterKind, FilterMethod};
use specreg::grid::log_space;
use specreg::problems::{build_fixture, fixture_registry};
use specreg::Result;

/// Thread count for the row-parallel sweeps; defaults to all cores.
const THREADS_ENV: &str = "SPECREG_THREADS";

#[derive(Parser)]
#[command(name = "specreg", version, about = "Spectral regularization rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write <name>.rows.csv and <name>.report.json
    Run {
        config: PathBuf,
        /// output directory; overrides the config's output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixture registry
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
    /// Certify a filter descriptor against the regularization assumptions
    CheckFilter {
        method: PathBuf,
        /// ‖T*T‖ of the operator the filter is used with
        #[arg(long, default_value_t = 1.0)]
        norm_tt: f64,
        #[arg(long, default_value_t = 1e-8)]
        alpha_min: f64,
        /// grid points per axis
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    List,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| specreg::SpecregError::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| specreg::SpecregError::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let cfg = ExperimentConfig::load(&config)?;
    let report = run_experiment(&cfg)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let (csv, json) = report.write_outputs(&dir)?;
    for v in &report.verdicts {
        println!(
            "{:<4} {:<28} observed={:<14.6e} limit {} (expected {:?})",
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.observed,
            v.limit,
            v.expected
        );
    }
    if let Some(e) = &report.fit_error {
        println!("fit refused: {e}");
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(report.passed())
}

fn list_fixtures() -> Result<bool> {
    println!("{:<22} {:>8} {:>8} {:>12} {:>12}  summary", "name", "dim", "groups", "lambda_max", "lambda_min");
    for e in fixture_registry() {
        let f = build_fixture(&e.descriptor, 0.0)?;
        println!(
            "{:<22} {:>8} {:>8} {:>12.4e} {:>12.4e}  {}",
            e.name,
            f.dim(),
            f.operator.groups(),
            f.operator.norm_tt(),
            f.operator.lambda_min(),
            e.summary
        );
        println!("  {}", serde_json::to_string(&e.descriptor)?);
    }
    Ok(true)
}

fn check_filter(path: PathBuf, norm_tt: f64, alpha_min: f64, points: usize) -> Result<bool> {
    let kind: FilterKind = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let m = FilterMethod::new(kind, norm_tt)?;
    let amax = if m.alpha_max.is_finite() { m.alpha_max } else { norm_tt };
    let alphas = log_space(alpha_min, amax, points)?;
    let mut lambdas = vec![0.0];
    lambdas.extend(log_space(norm_tt * 1e-12, norm_tt, points - 1)?);
    let rep = check_assumption_sr(&m, &alphas, &lambdas)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "method": m, "report": rep }))?);
    Ok(rep.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|_| match cli.command {
        Command::Run { config, out } => run(config, out),
        Command::Fixtures { action: FixtureAction::List } => list_fixtures(),
        Command::CheckFilter { method, norm_tt, alpha_min, points } => check_filter(method, norm_tt, alpha_min, points),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
