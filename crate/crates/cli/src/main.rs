//! `sta`: compress weights, run IDP, simulate models and regenerate the
//! figure tables.

mod compress;
mod figures;
mod idp;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sta_core::dmme::DmmeError;
use sta_core::nm::NmError;
use sta_core::prune::PruneError;
use sta_core::sim::{ExecMode, SimError};
use sta_core::NmConfig;

#[derive(Parser, Debug)]
#[command(name = "sta", version, about = "N:M sparse Transformer accelerator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pack a weight matrix into an NMSP file and report its compression ratio.
    Compress(compress::CompressArgs),
    /// Compile a model and run it on the cycle-level engine model.
    Simulate(simulate::SimulateArgs),
    /// Run inherited dynamic pruning on a synthetic quadratic objective.
    IdpDemo(idp::IdpArgs),
    /// Write the compression sweep and dataflow micro-benchmark CSVs.
    Figures(figures::FiguresArgs),
}

/// Flags shared by every subcommand that takes a pattern.
#[derive(Args, Debug, Clone)]
pub struct PatternArgs {
    /// N:M pattern, optionally `N:M/q` for the value width.
    #[arg(long, default_value = "2:4")]
    pub nm: NmConfig,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Auto,
    Dense,
}

impl From<ModeArg> for ExecMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => ExecMode::Auto,
            ModeArg::Dense => ExecMode::Dense,
        }
    }
}

pub fn out_dir(out: &Option<PathBuf>) -> anyhow::Result<Option<PathBuf>> {
    if let Some(d) = out {
        std::fs::create_dir_all(d)?;
    }
    Ok(out.clone())
}

fn is_pattern_violation(err: &anyhow::Error) -> bool {
    fn nm(e: &NmError) -> bool {
        matches!(e, NmError::PatternViolation { .. })
    }
    fn prune(e: &PruneError) -> bool {
        match e {
            PruneError::PatternViolation { .. } => true,
            PruneError::Nm(e) => nm(e),
            _ => false,
        }
    }
    fn dmme(e: &DmmeError) -> bool {
        matches!(e, DmmeError::PatternViolation { .. })
    }
    err.chain().any(|c| {
        if let Some(e) = c.downcast_ref::<NmError>() {
            return nm(e);
        }
        if let Some(e) = c.downcast_ref::<PruneError>() {
            return prune(e);
        }
        if let Some(e) = c.downcast_ref::<DmmeError>() {
            return dmme(e);
        }
        match c.downcast_ref::<SimError>() {
            Some(SimError::Nm(e)) => nm(e),
            Some(SimError::Prune(e)) => prune(e),
            Some(SimError::Engine(e)) => dmme(e),
            _ => false,
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STA_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // clap's own usage exit code (2) is reserved for pattern violations
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Compress(a) => compress::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::IdpDemo(a) => idp::run(&a),
        Command::Figures(a) => figures::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(SimError::Diagnostics(ds)) = e.downcast_ref::<SimError>() {
                for d in ds {
                    eprintln!("diagnostic: {d}");
                }
            }
            eprintln!("error: {e:#}");
            if is_pattern_violation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
