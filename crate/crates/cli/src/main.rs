//! Command-line experiments for SVRG-LD and its delay-equation approximation.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::Which;

#[derive(Debug, Parser)]
#[command(name = "svrg-sdde", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replica count, overriding `run.replicas`.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads for replica loops (results do not depend on it).
    #[arg(long, global = true, env = "SVSD_THREADS")]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set run.eta=0.005` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a model file with provenance.
    GenModel,
    /// Run SVRG-LD and/or the SDDE and export paths and moments.
    Run {
        #[arg(long, value_enum)]
        which: Option<Which>,
    },
    /// W1 between the two processes over a grid of (eta, delta).
    W1Sweep,
    /// Assumption report; exits with status 1 when any check fails.
    Verify,
    /// Per-epoch moments only.
    Moments {
        #[arg(long, value_enum)]
        which: Option<Which>,
    },
}

fn load_config(g: &Global) -> Result<config::ExperimentConfig> {
    let mut overrides = g.set.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(r) = g.replicas {
        overrides.push(format!("run.replicas={r}"));
    }
    if let Some(o) = &g.out {
        overrides.push(format!("output.dir={}", toml::Value::String(o.display().to_string())));
    }
    config::load(g.config.as_deref(), &overrides)
}

fn set_threads(n: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    set_threads(cli.global.threads)?;
    let cfg = load_config(&cli.global)?;
    eprint!("# effective config\n{}", cfg.to_toml());
    let (dir, passed) = match cli.command {
        Command::GenModel => (commands::gen_model(&cfg)?, true),
        Command::Run { which } => (commands::run(&cfg, which.unwrap_or(cfg.run.which))?, true),
        Command::W1Sweep => (commands::w1_sweep(&cfg)?, true),
        Command::Verify => commands::verify(&cfg)?,
        Command::Moments { which } => (commands::moments(&cfg, which.unwrap_or(cfg.run.which))?, true),
    };
    let path = dir.path().to_path_buf();
    dir.finish()?;
    println!("{}", path.display());
    Ok(passed)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed; see report.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
