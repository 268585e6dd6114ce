//! `lbcert`: certify, calibrate, verify and inspect lower-bound certificates.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Ctx, Failure};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lbcert", version, about = "Certified Maxwellian lower bounds for the homogeneous Boltzmann equation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute a certificate and its cascade trace.
    Certify,
    /// Calibrate the universal constants over the fixture plan.
    Calibrate,
    /// Check a certificate against the BKW solution or the solver.
    Verify,
    /// Pretty-print a certificate.
    Inspect {
        /// Certificate file; defaults to the certify output in --out.
        path: Option<PathBuf>,
    },
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Cmd::Inspect { path: Some(p) } = &cli.cmd {
        return commands::inspect(p);
    }
    let cfg_path = cli.config.as_ref().ok_or_else(|| Failure::Error("--config is required".into()))?;
    let loaded = config::load(cfg_path).map_err(Failure::Error)?;
    let ctx = Ctx { loaded: &loaded, out: cli.out.clone(), seed: cli.seed, quiet: cli.quiet };
    match cli.cmd {
        Cmd::Certify => commands::certify(&ctx),
        Cmd::Calibrate => commands::calibrate(&ctx),
        Cmd::Verify => commands::verify(&ctx),
        Cmd::Inspect { .. } => commands::inspect(&ctx.out.join(&loaded.cfg.outputs.certificate)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f.code() {
                2 => "infeasible",
                3 => "verification failed",
                _ => "error",
            };
            eprintln!("lbcert: {kind}: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
