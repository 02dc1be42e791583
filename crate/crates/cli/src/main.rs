use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use stepdiff::config::{ExperimentConfig, Formats};
use stepdiff::runner::{run_experiment, write_ensembles, write_report, RunOptions, Stage};
use stepdiff::Error;

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "stepdiff", version, about = "Simulate triangular arrays against their diffusion limits")]
struct Cli {
    /// Print the full default configuration and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the prelimit ensembles (and the limit) and write binary ensemble files.
    Simulate(Common),
    /// Evaluate the discrepancy conditions over the n ladder.
    CheckConditions(Common),
    /// Compute functionals and compare prelimit against limit samples.
    Compare(Common),
    /// Full pipeline including assertions; exits 1 when an assertion fails.
    Run(Common),
    /// Print the full default configuration.
    PrintDefaults,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Report formats: json, csv or both.
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Omit `generated_at` from the report.
    #[arg(long)]
    no_timestamp: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Capability { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf, Formats, usize), Failure> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(f) = &c.format {
        cfg.formats = Formats::parse(f)?;
    }
    cfg.validate()?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let workers = match c.workers {
        Some(0) => return Err(usage("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let formats = cfg.formats;
    Ok((cfg, out, formats, workers))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    let command = match (cli.print_defaults, cli.command) {
        (true, _) | (false, Some(Command::PrintDefaults)) => {
            print!("{}", ExperimentConfig::default().to_toml());
            return Ok(0);
        }
        (false, Some(c)) => c,
        (false, None) => return Err(usage("no subcommand given; see --help".into())),
    };
    let (stage, common) = match command {
        Command::Simulate(c) => (Stage::Simulate, c),
        Command::CheckConditions(c) => (Stage::Conditions, c),
        Command::Compare(c) => (Stage::Compare, c),
        Command::Run(c) => (Stage::Full, c),
        Command::PrintDefaults => unreachable!(),
    };
    let (cfg, out, formats, workers) = load(&common)?;

    if stage == Stage::Simulate {
        for p in write_ensembles(&cfg, &out, workers)? {
            println!("wrote {}", p.display());
        }
        return Ok(0);
    }

    let opts = RunOptions {
        workers,
        generated_at: if common.no_timestamp { None } else { Some(now()) },
    };
    let report = run_experiment(&cfg, stage, opts)?;
    for p in write_report(&report, &out, formats.json(), formats.csv())? {
        println!("wrote {}", p.display());
    }
    for a in &report.assertions {
        let tag = if a.passed { "PASS" } else { "FAIL" };
        println!("assertion {} {tag}: {}", a.index, a.detail);
    }
    Ok(if report.passed { 0 } else { EXIT_ASSERTION })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
