//! `codeforensic` command-line front end.

mod commands;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use codeforensic::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "codeforensic",
    version,
    about = "Forensic statistics for code generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Benchmark {
    Membership,
    Attribution,
    Detection,
    Family,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SingleMethodArg {
    Likelihood,
    Oneclass,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark corpus and ready-to-run configs.
    Simulate {
        #[arg(long, value_enum)]
        benchmark: Benchmark,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Generators (attribution, detection, family).
        #[arg(long)]
        models: Option<usize>,
        /// Fingerprint distance in noise units (attribution), human shift (detection)
        /// or family step.
        #[arg(long)]
        separation: Option<f64>,
        /// Snippets per author in each of train and test.
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Membership inference audit (LOSS or LRT).
    AuditMembership {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Human-vs-model detection, or the sampling-parameter shift study.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Treat the config as a sampling-shift study.
        #[arg(long)]
        sampling_shift: bool,
    },
    /// K-way attribution classifier.
    AttrClassify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Single-instance attribution by likelihood or one-class SVM.
    AttrSingle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<SingleMethodArg>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Kernel two-sample verification of a claimed generator.
    AttrVerify(commands::VerifyArgs),
    /// Metrics for a scored file, and/or a 2-D PCA projection of embeddings.
    Eval {
        /// JSONL of {"score": x, "label": 0|1} records.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Embedding records to project.
        #[arg(long)]
        project: Option<PathBuf>,
        #[arg(long, requires = "project")]
        project_out: Option<PathBuf>,
    },
    /// CSV export of a report's ROC curve or one of its grids.
    ExportReport {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "roc")]
        grid: Option<String>,
        #[arg(long)]
        roc: bool,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 2,
        ErrorKind::Data => 3,
        ErrorKind::Solver => 4,
    }
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let line = serde_json::json!({
        "error": kind.to_string(),
        "exit_code": exit_code(kind),
        "message": message,
    });
    eprintln!("{line}");
    ExitCode::from(exit_code(kind))
}

fn run(cli: Cli) -> codeforensic::Result<()> {
    match cli.command {
        Command::Simulate {
            benchmark,
            seed,
            out,
            models,
            separation,
            per_class,
        } => simulate::run(
            benchmark,
            &simulate::Options {
                seed,
                models,
                separation,
                per_class,
            },
            &out,
        ),
        Command::AuditMembership { config, out } => commands::audit(&config, out.as_deref()),
        Command::Detect {
            config,
            out,
            sampling_shift,
        } => {
            if sampling_shift {
                commands::sampling_shift(&config, out.as_deref())
            } else {
                commands::detect(&config, out.as_deref())
            }
        }
        Command::AttrClassify {
            config,
            out,
            save_model,
        } => commands::classify(&config, out.as_deref(), save_model.as_deref()),
        Command::AttrSingle {
            config,
            out,
            method,
            nu,
            gamma,
            save_model,
        } => commands::single(
            &config,
            out.as_deref(),
            commands::SingleOverrides { method, nu, gamma },
            save_model.as_deref(),
        ),
        Command::AttrVerify(args) => commands::verify(&args),
        Command::Eval {
            scores,
            out,
            project,
            project_out,
        } => commands::eval(
            scores.as_deref(),
            out.as_deref(),
            project.as_deref(),
            project_out.as_deref(),
        ),
        Command::ExportReport {
            report,
            out,
            grid,
            roc,
        } => commands::export(&report, out.as_deref(), grid.as_deref(), roc),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            return fail(ErrorKind::Validation, first);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

/// Reads `CODEFORENSIC_SEED`, which overrides any configured seed.
pub fn seed_override() -> codeforensic::Result<Option<u64>> {
    match std::env::var("CODEFORENSIC_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!(
                "CODEFORENSIC_SEED must be a non-negative integer, got `{v}`"
            ))
        }),
        Err(_) => Ok(None),
    }
}
