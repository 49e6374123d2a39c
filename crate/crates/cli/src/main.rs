use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellflux::config::{load_config, Command};
use cellflux::csvio::read_pi0;
use cellflux::run::{rerun, resolve_paths, run_to_dir, set_initial_distribution};
use cellflux::{exit, CliError, Result, RunConfig};
use cellflux_core::IsolatedSpace;
use clap::{Args, Parser, Subcommand};

/// Stochastic electron-transfer and ATP kinetics of bacterial cells.
#[derive(Parser, Debug)]
#[command(name = "cellflux", version, about)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,

    /// Output directory.
    #[arg(short, long, default_value = "cellflux-out")]
    out: PathBuf,

    /// Override a config key, e.g. `--set simulate.n_traj=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Step Δ of the transient solver.
    #[arg(long)]
    delta: Option<f64>,

    /// Δ as a fraction of 1 / max total rate, when no Δ is given.
    #[arg(long)]
    safety: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Validate a config and print its normalized form.
    Check {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Transient distribution π0ᵀ P_t at the configured times.
    Transient(Common),
    /// Exact event-driven trajectories and ensemble moments.
    Simulate(Common),
    /// Expected lifetime and lifetime density.
    Lifetime(Common),
    /// Maximum-likelihood fit of (x, π0) to a NADH/ATP time series.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Time-series CSV (`t,nadh,atp`); overrides `fit.data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Keep samples after `fit.t_max`.
        #[arg(long)]
        keep_late: bool,
    },
    /// Expected levels and rates under π0ᵀ P_t.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Initial distribution CSV, e.g. the `pi0.csv` written by `fit`.
        #[arg(long)]
        pi0: Option<PathBuf>,
    },
    /// Plot-ready tables of the four level and rate panels.
    Fig4 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pi0: Option<PathBuf>,
    },
    /// Rerun the command recorded in a manifest and check its outputs.
    Rerun {
        manifest: PathBuf,
        #[arg(short, long, default_value = "cellflux-rerun")]
        out: PathBuf,
    },
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load(common: &Common, extra: Vec<String>) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = common.delta {
        overrides.push(format!("delta={d:?}"));
    }
    if let Some(s) = common.safety {
        overrides.push(format!("safety={s:?}"));
    }
    overrides.extend(extra);
    let mut config = load_config(&common.config, &overrides)?;
    let base = common
        .config
        .parent()
        .map(absolute)
        .unwrap_or_else(|| absolute(Path::new(".")));
    resolve_paths(&mut config, &base);
    Ok(config)
}

fn with_pi0(mut config: RunConfig, pi0: &Option<PathBuf>) -> Result<RunConfig> {
    if let Some(path) = pi0 {
        let space = IsolatedSpace::new(config.capacities()?)?;
        set_initial_distribution(&mut config, read_pi0(path, &space)?);
    }
    Ok(config)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let (command, config, out) = match cmd {
        Cmd::Check { config, overrides } => {
            let c = load_config(&config, &overrides)?;
            print!("{}", c.to_toml());
            return Ok(());
        }
        Cmd::Rerun { manifest, out } => {
            let (outcome, m) = rerun(&manifest, &out)?;
            print!("{}", outcome.summary);
            println!("reproduced {} files in {}", m.outputs.len(), out.display());
            return Ok(());
        }
        Cmd::Transient(c) => (Command::Transient, load(&c, vec![])?, c.out),
        Cmd::Simulate(c) => (Command::Simulate, load(&c, vec![])?, c.out),
        Cmd::Lifetime(c) => (Command::Lifetime, load(&c, vec![])?, c.out),
        Cmd::Fit {
            common,
            data,
            keep_late,
        } => {
            let mut extra = Vec::new();
            if let Some(d) = data {
                extra.push(format!(
                    "fit.data={}",
                    quoted(&absolute(&d).display().to_string())
                ));
            }
            if keep_late {
                extra.push("fit.keep_late=true".into());
            }
            (Command::Fit, load(&common, extra)?, common.out)
        }
        Cmd::Predict { common, pi0 } => {
            let c = with_pi0(load(&common, vec![])?, &pi0)?;
            (Command::Predict, c, common.out)
        }
        Cmd::Fig4 { common, pi0 } => {
            let c = with_pi0(load(&common, vec![])?, &pi0)?;
            (Command::Fig4, c, common.out)
        }
    };
    let (outcome, _) = run_to_dir(command, &config, &out)?;
    print!("{}", outcome.summary);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code: &CliError = &e;
            ExitCode::from(code.exit_code() as u8)
        }
    }
}
