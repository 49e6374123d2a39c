//! Subcommands. Each one turns a validated config into a [`Bundle`] of
//! output files plus a short text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cellflux_core::inference::{FitOptions, Problem};
use cellflux_core::lifetime::uniform_grid;
use cellflux_core::sim::{sample_index, simulate_ensemble, trajectory_rng};
use cellflux_core::transient::{distributions_at, SegmentSystems};
use cellflux_core::{
    build_system, fit, lifetime, predict, simulate, simulate_cable, CableSpace, IsolatedSpace,
    Lifetime, Mode, ParamVector, Pools, Prediction, RateModel, StateIndex, Terminal,
};
use serde::Serialize;

use crate::config::{Command, InitialConfig, ModeKind, ParamsConfig, RunConfig};
use crate::csvio::{
    events_csv, fmt_f64, lifetime_csv, load_timeseries, pi0_csv, prediction_csv, read_raw_series,
    to_csv,
};
use crate::error::{CliError, Result};
use crate::manifest::{Bundle, Manifest, MANIFEST_FILE};

pub const SUMMARY_FILE: &str = "summary.txt";

/// Outcome of a subcommand before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub bundle: Bundle,
    pub summary: String,
    /// Effective configuration text recorded in the manifest.
    pub config_text: String,
}

/// Resolves paths inside the config against `base_dir` so the effective
/// config no longer depends on where it was read from.
pub fn resolve_paths(config: &mut RunConfig, base_dir: &Path) {
    if let Some(fit) = &mut config.fit {
        let p = PathBuf::from(&fit.data);
        if p.is_relative() {
            let joined = base_dir.join(p);
            let abs = joined.canonicalize().unwrap_or(joined);
            fit.data = abs.display().to_string();
        }
    }
}

/// Runs `cmd`; nothing touches the disk except reading inputs.
pub fn execute(cmd: Command, config: &RunConfig) -> Result<Outcome> {
    for s in config.unused_sections(cmd) {
        log::warn!(
            "section [{s}] is not used by `{}` and is ignored",
            cmd.name()
        );
    }
    let mut bundle = Bundle::default();
    let summary = match cmd {
        Command::Transient => transient(config, &mut bundle)?,
        Command::Simulate => simulate_cmd(config, &mut bundle)?,
        Command::Lifetime => lifetime_cmd(config, &mut bundle)?,
        Command::Fit => fit_cmd(config, &mut bundle)?,
        Command::Predict => predict_cmd(config, &mut bundle)?,
        Command::Fig4 => fig4(config, &mut bundle)?,
    };
    bundle.add(SUMMARY_FILE, summary.clone().into_bytes());
    Ok(Outcome {
        bundle,
        summary,
        config_text: config.to_toml(),
    })
}

/// Runs `cmd` and writes its outputs and manifest into `out_dir`.
pub fn run_to_dir(cmd: Command, config: &RunConfig, out_dir: &Path) -> Result<(Outcome, Manifest)> {
    let outcome = execute(cmd, config)?;
    let manifest = outcome
        .bundle
        .write(out_dir, cmd.name(), config.seed, &outcome.config_text)?;
    Ok((outcome, manifest))
}

/// Reruns the command recorded in a manifest into `out_dir` and checks that
/// every output is reproduced byte for byte.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> Result<(Outcome, Manifest)> {
    let recorded = Manifest::read(manifest_path)?;
    let cmd = Command::from_name(&recorded.command).ok_or_else(|| {
        CliError::Config(format!(
            "unknown command `{}` in manifest",
            recorded.command
        ))
    })?;
    for input in &recorded.inputs {
        let bytes = std::fs::read(&input.path).map_err(|e| CliError::io(&input.path, e))?;
        if crate::manifest::sha256_hex(&bytes) != input.sha256 {
            return Err(CliError::Mismatch(format!(
                "input {} changed since the recorded run",
                input.path
            )));
        }
    }
    let config = crate::config::parse_config(&recorded.config, &[])?;
    let (outcome, manifest) = run_to_dir(cmd, &config, out_dir)?;
    if manifest.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|o| !manifest.outputs.contains(o))
            .map(|o| o.path.as_str())
            .collect();
        return Err(CliError::Mismatch(format!(
            "outputs differ from {}: {}",
            manifest_path.display(),
            differing.join(", ")
        )));
    }
    Ok((outcome, manifest))
}

fn require_isolated(config: &RunConfig, what: &str) -> Result<()> {
    if config.mode == ModeKind::Cable {
        return Err(CliError::Config(format!(
            "`{what}` is defined for the isolated cell only"
        )));
    }
    Ok(())
}

fn step_for(config: &RunConfig, systems: &SegmentSystems) -> f64 {
    config
        .delta
        .unwrap_or_else(|| systems.default_step(config.safety))
}

fn cable_label(s: &cellflux_core::CableState) -> String {
    let cells: Vec<String> = s.cells.iter().map(|(m, n)| format!("{m}/{n}")).collect();
    let pools: Vec<String> = s.pools.iter().map(u32::to_string).collect();
    format!("{}|{}", cells.join(" "), pools.join(" "))
}

fn transient(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    let times = &config
        .transient
        .as_ref()
        .ok_or_else(|| CliError::Config("missing section [transient]".into()))?
        .times;
    let model = config.model()?;
    let profile = config.profile()?;
    let caps = config.capacities()?;
    let (index, pi0) = match model.mode {
        Mode::Isolated => {
            let space = IsolatedSpace::new(caps)?;
            let pi0 = config.initial_distribution(&space)?;
            (StateIndex::Isolated(space), pi0)
        }
        Mode::Cable { n_cells } => {
            let space = CableSpace::new(caps, n_cells)?;
            let init = config.initial_cable(n_cells)?;
            let i = space.index(&init).ok_or_else(|| {
                CliError::Config("initial cable state is outside the capacities".into())
            })?;
            let mut pi0 = vec![0.0; space.dense_len()?];
            pi0[i as usize] = 1.0;
            (StateIndex::Cable(space), pi0)
        }
    };
    let systems = SegmentSystems::build(&index, &model, &profile)?;
    let delta = step_for(config, &systems);
    let dists = distributions_at(&systems, &pi0, times, delta)?;

    let mut summary = format!("delta = {}\n", fmt_f64(delta));
    let mut rows = Vec::new();
    for (&t, d) in times.iter().zip(&dists) {
        let alive: f64 = d.iter().sum();
        writeln!(summary, "t = {}: alive mass {}", fmt_f64(t), fmt_f64(alive)).unwrap();
        for (i, p) in d.iter().enumerate() {
            let label = match &index {
                StateIndex::Isolated(s) => {
                    let (m, n) = s.levels(i);
                    format!("{m}/{n}")
                }
                StateIndex::Cable(s) => cable_label(&s.state(i as u128)?),
            };
            rows.push(vec![fmt_f64(t), i.to_string(), label, fmt_f64(*p)]);
        }
    }
    bundle.add("transient.csv", to_csv(&["t", "index", "state", "p"], rows));
    Ok(summary)
}

fn simulate_cmd(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    let opts = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing section [simulate]".into()))?;
    let model = config.model()?;
    let profile = config.profile()?;
    let mut summary = String::new();
    match model.mode {
        Mode::Cable { n_cells } => {
            let init = config.initial_cable(n_cells)?;
            let run = simulate_cable(
                &model,
                std::slice::from_ref(&profile),
                init,
                opts.horizon,
                config.seed,
                opts.max_events,
            )?;
            writeln!(summary, "events = {}", run.events.len()).unwrap();
            writeln!(summary, "terminal = {}", terminal_name(&run.terminal)).unwrap();
            writeln!(summary, "ledger balanced = {}", run.ledger_balances()).unwrap();
            if opts.n_traj > 1 || !opts.times.is_empty() {
                log::warn!("ensemble statistics are computed for the isolated cell only");
            }
            bundle.add("events.csv", events_csv(&run.events));
            bundle.add(
                "ledger.csv",
                to_csv(
                    &["pool", "initial", "inflow", "outflow", "last", "balanced"],
                    run.ledger.iter().enumerate().map(|(p, l)| {
                        vec![
                            p.to_string(),
                            l.initial.to_string(),
                            l.inflow.to_string(),
                            l.outflow.to_string(),
                            l.last.to_string(),
                            l.balances().to_string(),
                        ]
                    }),
                ),
            );
        }
        Mode::Isolated => {
            let space = IsolatedSpace::new(model.caps)?;
            let init_dist = config.initial_distribution(&space)?;
            if !opts.times.is_empty() {
                let stats = simulate_ensemble(
                    &model,
                    &profile,
                    &init_dist,
                    &opts.times,
                    opts.horizon,
                    opts.n_traj,
                    config.seed,
                )?;
                writeln!(summary, "trajectories = {}", stats.n_traj).unwrap();
                writeln!(
                    summary,
                    "deaths before horizon = {}",
                    stats.death_times.len()
                )
                .unwrap();
                bundle.add(
                    "ensemble.csv",
                    to_csv(
                        &[
                            "t",
                            "mean_m_ch",
                            "var_m_ch",
                            "mean_n_atp",
                            "var_n_atp",
                            "death_fraction",
                        ],
                        (0..stats.times.len()).map(|k| {
                            [
                                stats.times[k],
                                stats.mean_m[k],
                                stats.var_m[k],
                                stats.mean_n[k],
                                stats.var_n[k],
                                stats.death_fraction[k],
                            ]
                            .iter()
                            .map(|v| fmt_f64(*v))
                            .collect()
                        }),
                    ),
                );
            }
            if opts.log {
                let start = match config.initial.as_ref().and_then(|i| i.state) {
                    Some([m, n]) => (m, n),
                    None => {
                        // Not stream 0: that one drives the logged run itself.
                        let mut rng = trajectory_rng(config.seed, u64::MAX);
                        space.levels(sample_index(&init_dist, &mut rng))
                    }
                };
                let traj = simulate(
                    &model,
                    &profile,
                    Pools::isolated(start.0, start.1, &model.caps),
                    opts.horizon,
                    config.seed,
                )?;
                writeln!(summary, "logged events = {}", traj.events.len()).unwrap();
                writeln!(summary, "terminal = {}", terminal_name(&traj.terminal)).unwrap();
                let mut events = traj.events;
                if let Some(cap) = opts.max_events {
                    events.truncate(cap);
                }
                bundle.add("events.csv", events_csv(&events));
            }
        }
    }
    Ok(summary)
}

fn terminal_name(t: &Terminal) -> String {
    match t {
        Terminal::Alive => "alive".into(),
        Terminal::Dead { time } => format!("dead at {}", fmt_f64(*time)),
    }
}

fn lifetime_cmd(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    require_isolated(config, "lifetime")?;
    let opts = config.lifetime.unwrap_or(crate::config::LifetimeConfig {
        grid_end: None,
        grid_points: crate::config::DEFAULT_GRID_POINTS,
        powering: false,
    });
    let model = config.model()?;
    let profile = config.profile()?;
    let ext = profile.segments()[0].ext;
    if profile.segments().iter().any(|s| s.ext != ext) {
        return Err(CliError::Config(
            "lifetime needs a constant external state (one profile segment)".into(),
        ));
    }
    let space = IsolatedSpace::new(model.caps)?;
    let pi0 = config.initial_distribution(&space)?;
    let sys = build_system(&StateIndex::Isolated(space), &model, &ext)?;
    let delta = opts.powering.then(|| {
        config
            .delta
            .unwrap_or_else(|| cellflux_core::transient::default_step(&sys, config.safety))
    });
    let grid = opts.grid_end.map(|end| uniform_grid(end, opts.grid_points));
    let result = match (&grid, cellflux_core::expected_lifetime(&sys, &pi0)?) {
        (None, Lifetime::Finite(mean)) => {
            let g = uniform_grid(
                cellflux_core::lifetime::DEFAULT_GRID_SPAN * mean,
                opts.grid_points,
            );
            lifetime(&sys, &pi0, Some(&g), delta)?
        }
        (g, _) => lifetime(&sys, &pi0, g.as_deref(), delta)?,
    };
    let mut summary = String::new();
    match result.expected {
        Lifetime::Finite(v) => writeln!(summary, "E[L] = {}", fmt_f64(v)).unwrap(),
        Lifetime::Infinite => writeln!(summary, "E[L] = inf").unwrap(),
    }
    writeln!(summary, "pdf mass on grid = {}", fmt_f64(result.death_mass)).unwrap();
    if let Some(d) = delta {
        writeln!(summary, "delta = {}", fmt_f64(d)).unwrap();
    }
    bundle.add("lifetime.csv", lifetime_csv(&result.grid, &result.pdf));
    Ok(summary)
}

#[derive(Serialize)]
struct FitReport {
    status: String,
    nll: f64,
    initial_nll: f64,
    iterations: usize,
    samples: usize,
    dropped_samples: usize,
    spacing: f64,
    delta: f64,
    x_hat: ParamsConfig,
    x_init: ParamsConfig,
    pi0: Pi0Summary,
    trace: Vec<TraceRow>,
}

#[derive(Serialize)]
struct Pi0Summary {
    /// Entries above 1e-9.
    support: usize,
    mean_nadh_units: f64,
    mean_atp_units: f64,
    top: Vec<Pi0Entry>,
}

#[derive(Serialize)]
struct Pi0Entry {
    index: usize,
    m_ch: u32,
    n_atp: u32,
    p: f64,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    nll: f64,
    gamma: f64,
    rho: f64,
    zeta: f64,
    beta: f64,
    step: f64,
    backtracks: usize,
}

struct Loaded {
    series: cellflux_core::TimeSeries,
    dropped: usize,
    path: PathBuf,
}

fn load_fit_data(config: &RunConfig) -> Result<Loaded> {
    let opts = config
        .fit
        .as_ref()
        .ok_or_else(|| CliError::Config("missing section [fit]".into()))?;
    let path = PathBuf::from(&opts.data);
    let caps = config.capacities()?;
    let (_, full) = load_timeseries(&path, config.full_scale(), &caps)?;
    let (series, dropped) = if opts.keep_late {
        (full, 0)
    } else {
        let kept = full.truncated(opts.t_max);
        let dropped = full.len() - kept.len();
        if dropped > 0 {
            log::info!("dropped {dropped} samples after t = {}", opts.t_max);
        }
        (kept, dropped)
    };
    Ok(Loaded {
        series,
        dropped,
        path,
    })
}

fn fit_cmd(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    require_isolated(config, "fit")?;
    let opts = config.fit.as_ref().expect("checked by load_fit_data");
    let data = load_fit_data(config)?;
    bundle.input(data.path.clone());
    let caps = config.capacities()?;
    let profile = config.profile()?;
    let series = data.series;
    let delta = config
        .delta
        .unwrap_or(series.spacing() / opts.steps_per_sample as f64);
    let model = RateModel::isolated(ParamVector::default(), caps)?;
    let problem = Problem::new(series.clone(), &profile, &model, delta)?;
    let init = opts
        .init
        .or(config.params)
        .ok_or_else(|| {
            CliError::Config("fit needs a starting point: [fit.init] or [params]".into())
        })?
        .to_params()?;
    let fit_opts = FitOptions {
        max_outer: opts.max_outer,
        rel_tol: opts.rel_tol,
        scaling: opts.scaling.into(),
        ..FitOptions::default()
    };
    let result = fit(&problem, &init, &fit_opts)?;

    let space = problem.space();
    let z = problem.observation_map();
    let level = z.project(&result.pi0_hat);
    let mut top: Vec<Pi0Entry> = result
        .pi0_hat
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 1e-9)
        .map(|(i, p)| {
            let (m_ch, n_atp) = space.levels(i);
            Pi0Entry {
                index: i,
                m_ch,
                n_atp,
                p: *p,
            }
        })
        .collect();
    let support = top.len();
    top.sort_by(|a, b| b.p.total_cmp(&a.p).then(a.index.cmp(&b.index)));
    top.truncate(10);
    let trace: Vec<TraceRow> = result
        .trace
        .iter()
        .map(|e| TraceRow {
            iteration: e.iteration,
            nll: e.nll,
            gamma: e.x.gamma,
            rho: e.x.rho,
            zeta: e.x.zeta,
            beta: e.x.beta,
            step: e.step,
            backtracks: e.backtracks,
        })
        .collect();
    let report = FitReport {
        status: result.status.name().into(),
        nll: result.nll,
        initial_nll: result.trace[0].nll,
        iterations: result.trace.len() - 1,
        samples: series.len(),
        dropped_samples: data.dropped,
        spacing: series.spacing(),
        delta,
        x_hat: ParamsConfig::from_params(&result.x_hat),
        x_init: ParamsConfig::from_params(&init),
        pi0: Pi0Summary {
            support,
            mean_nadh_units: level[0],
            mean_atp_units: level[1],
            top,
        },
        trace,
    };
    bundle.add(
        "fit_report.toml",
        toml::to_string(&report)
            .expect("report serializes")
            .into_bytes(),
    );
    bundle.add("pi0.csv", pi0_csv(space, &result.pi0_hat));
    let fitted = model.with_params(result.x_hat);
    let prediction = predict(
        &fitted,
        &result.pi0_hat,
        &profile,
        &series.times(),
        delta,
        [series.alpha_nadh, series.alpha_atp],
    )?;
    bundle.add("prediction.csv", prediction_csv(&prediction));

    let x = result.x_hat;
    let mut summary = String::new();
    writeln!(summary, "status = {}", report.status).unwrap();
    writeln!(summary, "nll = {}", fmt_f64(result.nll)).unwrap();
    writeln!(summary, "iterations = {}", report.iterations).unwrap();
    writeln!(
        summary,
        "x_hat = [gamma {}, rho {}, zeta {}, beta {}]",
        fmt_f64(x.gamma),
        fmt_f64(x.rho),
        fmt_f64(x.zeta),
        fmt_f64(x.beta)
    )
    .unwrap();
    Ok(summary)
}

/// Prediction on `grid` (or the default grid) for `predict` and `fig4`.
fn prediction_for(config: &RunConfig, grid: Option<Vec<f64>>) -> Result<(Prediction, f64)> {
    require_isolated(config, "predict")?;
    let model = config.model()?;
    let profile = config.profile()?;
    let space = IsolatedSpace::new(model.caps)?;
    let pi0 = config.initial_distribution(&space)?;
    let systems = SegmentSystems::build(&StateIndex::Isolated(space), &model, &profile)?;
    let delta = step_for(config, &systems);
    let grid = match grid {
        Some(g) => g,
        None => {
            let p = config.predict.unwrap_or(crate::config::PredictConfig {
                t_end: None,
                step: None,
            });
            let end = p.t_end.unwrap_or(profile.end());
            match p.step {
                Some(h) if h > 0.0 => {
                    let n = (end / h + 1e-9).floor() as usize;
                    (0..=n).map(|k| k as f64 * h).collect()
                }
                Some(h) => {
                    return Err(CliError::Config(format!(
                        "predict.step must be positive, got {h}"
                    )))
                }
                None => uniform_grid(end, 1001),
            }
        }
    };
    Ok((
        predict(&model, &pi0, &profile, &grid, delta, config.alpha())?,
        delta,
    ))
}

fn predict_cmd(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    let (p, delta) = prediction_for(config, None)?;
    bundle.add("prediction.csv", prediction_csv(&p));
    Ok(peak_summary(&p, delta))
}

fn peak_summary(p: &Prediction, delta: f64) -> String {
    let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    let mut s = String::new();
    writeln!(s, "delta = {}", fmt_f64(delta)).unwrap();
    writeln!(s, "peak ATP = {} mM", fmt_f64(max(&p.exp_atp_raw))).unwrap();
    writeln!(
        s,
        "peak ATP synthesis = {} /cell/s",
        fmt_f64(max(&p.rate_atp_syn))
    )
    .unwrap();
    writeln!(
        s,
        "peak ATP consumption = {} /cell/s",
        fmt_f64(max(&p.rate_atp_con))
    )
    .unwrap();
    writeln!(
        s,
        "peak NADH generation = {} /cell/s",
        fmt_f64(max(&p.rate_nadh_gen))
    )
    .unwrap();
    writeln!(
        s,
        "peak NADH consumption = {} /cell/s",
        fmt_f64(max(&p.rate_nadh_con))
    )
    .unwrap();
    s
}

/// Plot-ready tables of the four panels: NADH and ATP levels against the
/// data, and the ATP and NADH rates.
fn fig4(config: &RunConfig, bundle: &mut Bundle) -> Result<String> {
    let observed = match &config.fit {
        Some(f) => {
            let path = PathBuf::from(&f.data);
            let raw = read_raw_series(&path)?;
            bundle.input(path);
            Some(raw)
        }
        None => None,
    };
    let grid = observed.as_ref().map(|raw| {
        let t_max = config
            .fit
            .as_ref()
            .filter(|f| !f.keep_late)
            .map_or(f64::INFINITY, |f| f.t_max);
        raw.times
            .iter()
            .copied()
            .filter(|t| *t <= t_max * (1.0 + 1e-12))
            .collect::<Vec<f64>>()
    });
    let (p, delta) = prediction_for(config, grid)?;
    let obs = |k: usize, c: usize| {
        observed
            .as_ref()
            .map_or(String::new(), |raw| fmt_f64(raw.values[k][c]))
    };
    let level_panel = |col: &[f64], c: usize| {
        to_csv(
            &["t", "predicted", "observed"],
            (0..p.len()).map(|k| vec![fmt_f64(p.t[k]), fmt_f64(col[k]), obs(k, c)]),
        )
    };
    let rate_panel = |a: &[f64], b: &[f64], names: [&str; 2]| {
        to_csv(
            &["t", names[0], names[1]],
            (0..p.len()).map(|k| vec![fmt_f64(p.t[k]), fmt_f64(a[k]), fmt_f64(b[k])]),
        )
    };
    bundle.add("fig4_nadh_level.csv", level_panel(&p.exp_nadh_raw, 0));
    bundle.add("fig4_atp_level.csv", level_panel(&p.exp_atp_raw, 1));
    bundle.add(
        "fig4_atp_rates.csv",
        rate_panel(
            &p.rate_atp_syn,
            &p.rate_atp_con,
            ["synthesis", "consumption"],
        ),
    );
    bundle.add(
        "fig4_nadh_rates.csv",
        rate_panel(
            &p.rate_nadh_gen,
            &p.rate_nadh_con,
            ["generation", "consumption"],
        ),
    );
    Ok(peak_summary(&p, delta))
}

/// Replaces the initial distribution, e.g. with a fitted `π0`.
pub fn set_initial_distribution(config: &mut RunConfig, pi0: Vec<f64>) {
    config.initial = Some(InitialConfig {
        state: None,
        pi0: Some(pi0),
        cells: None,
        pools: None,
    });
}

/// Returns the manifest path inside an output directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
