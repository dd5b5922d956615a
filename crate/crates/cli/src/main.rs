//! `evofam <command> --config <path> [--out <dir>] [--seed <int>]`
//!
//! Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 configuration
//! error, 3 numerical non-convergence, 4 hypothesis violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evofam_core::{config, Error};

mod cmds;
mod csvio;

#[derive(Parser)]
#[command(name = "evofam", about = "Evolution-family experiment harness", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV reports (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Relative modulus of the family and its integrability verdict.
    Dini(RunArgs),
    /// Propagator tables by all three methods plus cross-method gaps.
    Evolve(RunArgs),
    /// Frozen and non-autonomous admissibility constants per anchor.
    Admissibility(RunArgs),
    /// Two-sided output-energy equivalence experiment.
    Equivalence(RunArgs),
    /// Convolution chain under a Hoelder drift, or its divergence study.
    Hoelder(RunArgs),
    /// Half-plane resolvent scan against the spectral oracle.
    Resolvent(RunArgs),
    /// Empirical maximal-regularity constant and initial-value check.
    Mr(RunArgs),
    /// Boundary-observed fractional showcase with a resolution rerun.
    ExampleS4(RunArgs),
}

impl Cmd {
    fn args(&self) -> &RunArgs {
        match self {
            Cmd::Dini(a)
            | Cmd::Evolve(a)
            | Cmd::Admissibility(a)
            | Cmd::Equivalence(a)
            | Cmd::Hoelder(a)
            | Cmd::Resolvent(a)
            | Cmd::Mr(a)
            | Cmd::ExampleS4(a) => a,
        }
    }
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::PicardDiverged { .. }
        | Error::StepSizeViolation { .. }
        | Error::SolveResidual { .. }
        | Error::SingularSystem { .. }
        | Error::EigFailed
        | Error::SvdFailed => 3,
        Error::Hypothesis { .. }
        | Error::EllipticityViolation { .. }
        | Error::FractionalExponentRange { .. }
        | Error::NotSpd { .. }
        | Error::NotSymmetric
        | Error::NoObservedBoundary => 4,
        _ => 2,
    }
}

fn init_threads() -> Result<(), String> {
    match std::env::var("EVOFAM_THREADS") {
        Err(_) => Ok(()),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // A second initialization (tests driving the binary in-process
                // twice) is harmless: the pool is already sized.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
                Ok(())
            }
            _ => Err(format!(
                "EVOFAM_THREADS must be a positive integer, got `{v}`"
            )),
        },
    }
}

fn run(cmd: &Cmd) -> evofam_core::Result<bool> {
    let args = cmd.args();
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = config::parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let out = csvio::CsvOut::new(&out_dir)?;
    match cmd {
        Cmd::Dini(_) => cmds::cmd_dini(&cfg, &base, &out),
        Cmd::Evolve(_) => cmds::cmd_evolve(&cfg, &base, &out),
        Cmd::Admissibility(_) => cmds::cmd_admissibility(&cfg, &base, &out),
        Cmd::Equivalence(_) => cmds::cmd_equivalence(&cfg, &base, &out),
        Cmd::Hoelder(_) => cmds::cmd_hoelder(&cfg, &base, &out),
        Cmd::Resolvent(_) => cmds::cmd_resolvent(&cfg, &base, &out),
        Cmd::Mr(_) => cmds::cmd_mr(&cfg, &base, &out),
        Cmd::ExampleS4(_) => cmds::cmd_example_s4(&cfg, &base, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(&cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::PicardDiverged { .. }) {
                eprintln!(
                    "hint: raise `steps` or shorten `tau` so the coefficient variation per interval shrinks"
                );
            }
            ExitCode::from(exit_for(&e))
        }
    }
}
