//! Experiment runner for the facelift laboratory: config parsing,
//! subcommand dispatch, run manifests and CSV/JSON artifacts.

pub mod config;
pub mod criteria;
pub mod manifest;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, RunConfig};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "facelift", version, about = "Dual facelift experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Naive terminal value against the facelift envelope over a z grid.
    Facelift {
        #[command(flatten)]
        common: Common,
        /// `log` or `power:<p>`.
        #[arg(long)]
        utility: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        psi: Option<String>,
        /// `start:stop:count`.
        #[arg(long)]
        z_grid: Option<String>,
    },
    /// Germ price: optimized push controls, κ sweep and the bang family.
    Germ(Common),
    /// Optimized dual values over horizons and z.
    DualMc(Common),
    /// Primal values at constant exposures, with weak-duality cells.
    PrimalMc(Common),
    /// Dual HJB solve with probes and the large-z slope.
    Hjb(Common),
    /// Plain against modified objective over a capped sweep.
    Nonattain(Common),
    /// Merge run directories into a summary.
    Report {
        /// Directory holding a run, or run subdirectories.
        dir: PathBuf,
    },
}

/// Input rejected before or after the numerics, other than a config error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Maps an error chain to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<ValidationError>() {
            return EXIT_VALIDATION;
        }
        if let Some(core) = cause.downcast_ref::<facelift_core::Error>() {
            return match core {
                facelift_core::Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_VALIDATION,
            };
        }
    }
    EXIT_OTHER
}

/// Runs one subcommand; returns the manifest of the run.
pub fn execute(cli: Cli) -> anyhow::Result<RunManifest> {
    match cli.command {
        Command::Facelift {
            mut common,
            utility,
            phi,
            psi,
            z_grid,
        } => {
            for (key, value) in [
                ("utility", utility),
                ("facelift.phi", phi),
                ("facelift.psi", psi),
                ("facelift.z_grid", z_grid),
            ] {
                if let Some(v) = value {
                    common.overrides.push(format!("{key}={v}"));
                }
            }
            run::run("facelift", &common)
        }
        Command::Germ(c) => run::run("germ", &c),
        Command::DualMc(c) => run::run("dual-mc", &c),
        Command::PrimalMc(c) => run::run("primal-mc", &c),
        Command::Hjb(c) => run::run("hjb", &c),
        Command::Nonattain(c) => run::run("nonattain", &c),
        Command::Report { dir } => report::report(&dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let numerical = anyhow::Error::from(facelift_core::Error::Numerical("NaN".into()));
        assert_eq!(exit_code(&numerical), EXIT_NUMERICAL);
        let invalid = anyhow::Error::from(facelift_core::Error::NonPositive {
            name: "z",
            value: 0.0,
        });
        assert_eq!(
            exit_code(&invalid.context("while running")),
            EXIT_VALIDATION
        );
        let config = RunConfig::parse("nope = 1").unwrap_err();
        assert_eq!(exit_code(&config.into()), EXIT_VALIDATION);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), EXIT_OTHER);
    }
}
