//! `plim`: precompute manifold atlases, run coarse models and compare them with fine runs.

mod commands;
mod config;
mod fail;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use fail::{config_error, Failure};

#[derive(Parser)]
#[command(name = "plim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Atlas file; overrides the configuration.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Named initial condition; without --config it also picks the system.
    #[arg(long)]
    preset: Option<String>,
    /// Base annealing seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a commented configuration template.
    Init {
        /// lorenz, hamiltonian4, oscillator or elastowave.
        #[arg(default_value = "lorenz")]
        system: String,
        /// Template path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and store an atlas.
    Precompute(Common),
    /// Run the coarse model only.
    Evolve(Common),
    /// Run fine and coarse models and write comparison tables.
    Compare(Common),
    /// Running time averages of every column of a CSV with a `t` column.
    Average {
        input: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::for_preset(p)?,
        (None, None) => return Err(config_error("give --config or --preset")),
    };
    if let Some(p) = &c.preset {
        cfg.preset = Some(p.clone());
        cfg.initial = None;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Init { system, out } => {
            let text = config::template(&system)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| config_error(format!("{}: {e}", p.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Precompute(c) => {
            let cfg = resolve(&c)?;
            let path = c.atlas.clone().or_else(|| cfg.atlas.clone());
            commands::precompute(&cfg, path.as_deref())
        }
        Command::Evolve(c) => commands::evolve(&resolve(&c)?, c.atlas.as_deref()),
        Command::Compare(c) => commands::compare(&resolve(&c)?, c.atlas.as_deref()),
        Command::Average { input, out } => commands::average(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
