use std::path::PathBuf;
use std::process::ExitCode;

use calfree::experiment::{sweep, write_sweep, RunSpec};
use calfree::par::Execution;
use calfree::ranging::ApKind;
use calfree::scenario::{self, Severity};
use calfree::Error;
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "calfree", version, about = "Calibration-free Wi-Fi/PDR positioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rss,
    Rtt,
}

impl From<ModeArg> for ApKind {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rss => ApKind::Rss,
            ModeArg::Rtt => ApKind::Rtt,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and run the engine once per gate threshold.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Ranging mode; defaults to the scenario's `mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Comma-separated gate thresholds in meters; defaults to the
        /// scenario's `rho`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rho: Option<Vec<f64>>,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root.
        #[arg(long, env = "CALFREE_OUT", default_value = "calfree-out")]
        out: PathBuf,
        /// Also run the benchmark with the true parameters.
        #[arg(long)]
        benchmark: bool,
        /// Disable data parallelism.
        #[arg(long)]
        sequential: bool,
    },
    /// Check a scenario file and print diagnostics.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Validation(_) | Error::InvalidInput(_) => EXIT_VALIDATION,
        Error::Divergence { .. } | Error::SingularInnovation => EXIT_DIVERGENCE,
        _ => EXIT_FAILURE,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn validate(path: PathBuf, mode: Option<ModeArg>) -> ExitCode {
    let s = match scenario::load(&path) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let diags = s.validate(mode.map(Into::into));
    for d in &diags {
        println!("{d}");
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        ExitCode::from(EXIT_VALIDATION)
    } else {
        println!("ok: {}", path.display());
        ExitCode::SUCCESS
    }
}

struct RunArgs {
    scenario: PathBuf,
    mode: Option<ModeArg>,
    rho: Option<Vec<f64>>,
    seed: Option<u64>,
    out: PathBuf,
    benchmark: bool,
    sequential: bool,
}

fn run(args: RunArgs) -> ExitCode {
    let s = match scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let Some(mode) = args.mode.map(ApKind::from).or(s.mode) else {
        return fail(Error::Validation(vec!["no --mode given and the scenario sets none".into()]));
    };
    for d in s.validate(Some(mode)).iter().filter(|d| d.severity == Severity::Warning) {
        eprintln!("{d}");
    }
    let plan = RunSpec {
        mode,
        rho: args.rho.unwrap_or_else(|| s.rho.clone()),
        seed: args.seed,
        benchmark: args.benchmark,
    };
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = sweep(&s, &plan, exec).and_then(|sw| write_sweep(&sw, &args.out).map(|dir| (sw, dir)));
    let (sw, dir) = match result {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for r in sw.runs.iter().chain(&sw.benchmark) {
        let label = if r.benchmark {
            "benchmark".to_owned()
        } else {
            format!("rho={}", r.rho)
        };
        let interval = r
            .report
            .mean_ranging_interval
            .map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3} s"));
        println!(
            "{label:<12} mae {:.3} m  rmse {:.3} m  p75 {:.3} m  interval {interval}",
            r.report.mae, r.report.rmse, r.report.p75
        );
    }
    println!("wrote {}", dir.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            mode,
            rho,
            seed,
            out,
            benchmark,
            sequential,
        } => run(RunArgs {
            scenario,
            mode,
            rho,
            seed,
            out,
            benchmark,
            sequential,
        }),
        Command::Validate { scenario, mode } => validate(scenario, mode),
    }
}
