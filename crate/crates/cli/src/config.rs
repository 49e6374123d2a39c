//! Run configuration: one TOML schema shared by every subcommand.
//!
//! The schema is documented in `docs/config.md`. Parsing reports line
//! numbers for syntax and type errors; semantic checks on profile segments
//! point at the segment's table header.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use cellflux_core::inference::{FullScale, StepScaling};
use cellflux_core::kinetics::Segment;
use cellflux_core::{
    CableCoefficients, CableState, Capacities, DeathRate, ExternalProfile, ExternalState,
    IsolatedSpace, ParamVector, RateModel,
};
use serde::{Deserialize, Serialize};
use toml::{Spanned, Table, Value};

use crate::error::{CliError, Result};

pub const DEFAULT_SAFETY: f64 = 0.1;
pub const DEFAULT_GRID_POINTS: usize = 10_000;
pub const DEFAULT_STEPS_PER_SAMPLE: u64 = 16;
/// Samples after this time are discarded by default (cell lysis).
pub const DEFAULT_T_MAX: f64 = 1300.0;

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}
fn default_sigma_a() -> f64 {
    ExternalState::SUFFICIENT_ACCEPTOR
}
fn default_pool() -> u32 {
    1
}
fn default_one() -> u64 {
    1
}
fn default_true() -> bool {
    true
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_steps_per_sample() -> u64 {
    DEFAULT_STEPS_PER_SAMPLE
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}
fn default_max_outer() -> usize {
    500
}
fn default_rel_tol() -> f64 {
    1e-10
}
fn default_nadh_max() -> f64 {
    FullScale::default().nadh_max
}
fn default_atp_max() -> f64 {
    FullScale::default().atp_max
}
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    #[default]
    Isolated,
    Cable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Δ = safety / max_i R_i unless `delta` is given.
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub mode: ModeKind,
    pub capacities: CapacitiesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death: Option<DeathConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cable: Option<CableConfig>,
    pub profile: ProfileConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<TransientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime: Option<LifetimeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitiesConfig {
    pub m_ch: u32,
    pub n_axp: u32,
    #[serde(default = "default_pool")]
    pub q_l: u32,
    #[serde(default = "default_pool")]
    pub q_h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default)]
    pub gamma: f64,
    pub rho: f64,
    pub zeta: f64,
    pub beta: f64,
}

impl ParamsConfig {
    pub fn to_params(self) -> Result<ParamVector> {
        Ok(ParamVector::new(
            self.gamma, self.rho, self.zeta, self.beta,
        )?)
    }

    pub fn from_params(x: &ParamVector) -> Self {
        Self {
            gamma: x.gamma,
            rho: x.rho,
            zeta: x.zeta,
            beta: x.beta,
        }
    }
}

/// `constant` applies to every state; `table` lists one rate per
/// `(m_ch, n_atp)` in index order. At most one may be non-trivial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeathConfig {
    #[serde(default)]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableConfig {
    pub n_cells: usize,
    #[serde(default)]
    pub anaerobic: f64,
    #[serde(default)]
    pub heem_aerobic: f64,
    #[serde(default)]
    pub heem_anaerobic: f64,
    #[serde(default)]
    pub source: f64,
    #[serde(default)]
    pub sink: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub segments: Vec<Spanned<SegmentConfig>>,
}

/// A constant piece, or a linear donor ramp from `sigma_d` to `sigma_d_end`
/// cut into constant pieces of width `piece`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub start: f64,
    pub end: f64,
    pub sigma_d: f64,
    #[serde(default = "default_sigma_a")]
    pub sigma_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_d_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piece: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Point mass on `(m_ch, n_atp)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<[u32; 2]>,
    /// Full distribution in index order `m_ch · (N_AXP + 1) + n_atp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0: Option<Vec<f64>>,
    /// Cable: `(m_ch, n_atp)` per cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<[u32; 2]>>,
    /// Cable: the `n_cells + 1` membrane pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pools: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    #[serde(default = "default_nadh_max")]
    pub nadh_max: f64,
    #[serde(default = "default_atp_max")]
    pub atp_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientConfig {
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub horizon: f64,
    #[serde(default = "default_one")]
    pub n_traj: u64,
    /// Ensemble sample times.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Write the event log of one trajectory.
    #[serde(default = "default_true")]
    pub log: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_end: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Use `(I + ΔA)^n` for the pdf instead of uniformization.
    #[serde(default, skip_serializing_if = "is_false")]
    pub powering: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Identity,
    GaussNewton,
    #[default]
    Joint,
}

impl From<ScalingKind> for StepScaling {
    fn from(s: ScalingKind) -> Self {
        match s {
            ScalingKind::Identity => StepScaling::Identity,
            ScalingKind::GaussNewton => StepScaling::GaussNewton,
            ScalingKind::Joint => StepScaling::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Time-series CSV, relative to the config file.
    pub data: String,
    /// Δ = spacing / steps_per_sample; must be a power of two.
    #[serde(default = "default_steps_per_sample")]
    pub steps_per_sample: u64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Keep samples after `t_max`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub keep_late: bool,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub scaling: ScalingKind,
    /// Starting point; `[params]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ParamsConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Defaults to the profile end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Grid step; 1001 evenly spaced points when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

/// Subcommands, for deciding which sections are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Transient,
    Simulate,
    Lifetime,
    Fit,
    Predict,
    Fig4,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Transient => "transient",
            Command::Simulate => "simulate",
            Command::Lifetime => "lifetime",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Fig4 => "fig4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Command::Transient,
            Command::Simulate,
            Command::Lifetime,
            Command::Fit,
            Command::Predict,
            Command::Fig4,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }

    fn sections(&self) -> &'static [&'static str] {
        match self {
            Command::Transient => &["params", "death", "cable", "initial", "transient"],
            Command::Simulate => &["params", "death", "cable", "initial", "simulate"],
            Command::Lifetime => &["params", "death", "initial", "lifetime"],
            Command::Fit => &["params", "units", "fit"],
            Command::Predict => &["params", "initial", "units", "predict"],
            Command::Fig4 => &["params", "initial", "units", "predict", "fit"],
        }
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a config and applies `key.path=value` overrides on top.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return parse_text(text);
    }
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let merged = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    parse_text(&merged)
}

fn parse_text(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_owned()))?;
    config.validate(text)?;
    Ok(config)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, overrides).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// `a.b.c=value`; the value is read as a TOML value, or taken as a bare
/// string if it does not parse.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "override key `{key}` is malformed"
        )));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

impl RunConfig {
    /// Normalized TOML text: defaults filled in, keys in schema order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self, text: &str) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad(format!("safety must lie in (0, 1), got {}", self.safety));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        self.capacities()?;
        match (self.mode, &self.cable) {
            (ModeKind::Cable, None) => {
                return bad("mode = \"cable\" needs a [cable] section".into())
            }
            (ModeKind::Cable, Some(c)) if c.n_cells == 0 => {
                return bad("cable.n_cells must be at least 1".into())
            }
            _ => {}
        }
        if let Some(d) = &self.death {
            if d.table.is_some() && d.constant != 0.0 {
                return bad("death: give either `constant` or `table`, not both".into());
            }
        }
        for (k, seg) in self.profile.segments.iter().enumerate() {
            let s = seg.get_ref();
            let at = format!(
                "profile.segments[{k}] (line {})",
                line_of(text, seg.span().start)
            );
            if let Some(p) = s.piece {
                if !(p > 0.0) {
                    return bad(format!("{at}: piece must be positive"));
                }
            }
            if s.sigma_d_end.is_some() && s.piece.is_none() {
                return bad(format!("{at}: a ramp (sigma_d_end) needs `piece`"));
            }
            if !(s.start < s.end) {
                return bad(format!("{at}: start must precede end"));
            }
            if k == 0 && s.start != 0.0 {
                return bad(format!("{at}: the first segment must start at 0"));
            }
            if k > 0 {
                let prev = self.profile.segments[k - 1].get_ref().end;
                if s.start < prev {
                    return bad(format!(
                        "{at}: overlaps the previous segment (starts at {} before its end {prev})",
                        s.start
                    ));
                }
                if s.start > prev {
                    return bad(format!(
                        "{at}: leaves a gap after the previous segment ({prev} to {})",
                        s.start
                    ));
                }
            }
        }
        if let Some(u) = &self.units {
            if !(u.nadh_max > 0.0 && u.atp_max > 0.0) {
                return bad("units: full-scale values must be positive".into());
            }
        }
        if let Some(f) = &self.fit {
            if !f.steps_per_sample.is_power_of_two() || f.steps_per_sample < 2 {
                return bad(format!(
                    "fit.steps_per_sample must be a power of two of at least 2, got {}",
                    f.steps_per_sample
                ));
            }
        }
        if let Some(s) = &self.simulate {
            if !(s.horizon > 0.0) {
                return bad("simulate.horizon must be positive".into());
            }
            if s.n_traj == 0 {
                return bad("simulate.n_traj must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Sections present in the file but not used by `cmd`.
    pub fn unused_sections(&self, cmd: Command) -> Vec<&'static str> {
        let present: BTreeSet<&'static str> = [
            ("params", self.params.is_some()),
            ("death", self.death.is_some()),
            ("cable", self.cable.is_some()),
            ("initial", self.initial.is_some()),
            ("units", self.units.is_some()),
            ("transient", self.transient.is_some()),
            ("simulate", self.simulate.is_some()),
            ("lifetime", self.lifetime.is_some()),
            ("fit", self.fit.is_some()),
            ("predict", self.predict.is_some()),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.then_some(n))
        .collect();
        let used = cmd.sections();
        present.into_iter().filter(|s| !used.contains(s)).collect()
    }

    pub fn capacities(&self) -> Result<Capacities> {
        let c = self.capacities;
        Capacities::new(c.m_ch, c.n_axp, c.q_l, c.q_h)
            .map_err(|e| CliError::Config(format!("capacities: {e}")))
    }

    pub fn params(&self) -> Result<ParamVector> {
        self.params
            .ok_or_else(|| CliError::Config("missing section [params]".into()))?
            .to_params()
    }

    pub fn death(&self) -> DeathRate {
        match &self.death {
            None => DeathRate::Zero,
            Some(DeathConfig { table: Some(t), .. }) => DeathRate::PerLevel(t.clone()),
            Some(d) if d.constant > 0.0 => DeathRate::Constant(d.constant),
            Some(_) => DeathRate::Zero,
        }
    }

    pub fn full_scale(&self) -> FullScale {
        self.units
            .map(|u| FullScale {
                nadh_max: u.nadh_max,
                atp_max: u.atp_max,
            })
            .unwrap_or_default()
    }

    /// Raw units per model unit for NADH and ATP.
    pub fn alpha(&self) -> [f64; 2] {
        let f = self.full_scale();
        [
            f.nadh_max / self.capacities.m_ch as f64,
            f.atp_max / self.capacities.n_axp as f64,
        ]
    }

    /// Rate model with `params` and the configured death rate.
    pub fn model_with(&self, params: ParamVector) -> Result<RateModel> {
        let caps = self.capacities()?;
        let model = match (self.mode, &self.cable) {
            (ModeKind::Cable, Some(c)) => RateModel::cable(
                params,
                caps,
                CableCoefficients {
                    anaerobic: c.anaerobic,
                    heem_aerobic: c.heem_aerobic,
                    heem_anaerobic: c.heem_anaerobic,
                    source: c.source,
                    sink: c.sink,
                },
                c.n_cells,
            )?,
            _ => RateModel::isolated(params, caps)?,
        };
        Ok(model.with_death(self.death())?)
    }

    pub fn model(&self) -> Result<RateModel> {
        self.model_with(self.params()?)
    }

    pub fn profile(&self) -> Result<ExternalProfile> {
        let mut segments = Vec::new();
        for s in self.profile.segments.iter().map(|s| *s.get_ref()) {
            match (s.sigma_d_end, s.piece) {
                (Some(to), Some(piece)) => {
                    let pieces = ((s.end - s.start) / piece - 1e-9).ceil().max(1.0) as usize;
                    ExternalProfile::push_linear_ramp(
                        &mut segments,
                        s.start,
                        s.end,
                        s.sigma_d,
                        to,
                        s.sigma_a,
                        pieces,
                    )?;
                }
                _ => segments.push(Segment {
                    start: s.start,
                    end: s.end,
                    ext: ExternalState::new(s.sigma_d, s.sigma_a)?,
                }),
            }
        }
        Ok(ExternalProfile::new(segments)?)
    }

    /// Initial distribution over the isolated space.
    pub fn initial_distribution(&self, space: &IsolatedSpace) -> Result<Vec<f64>> {
        let init = self
            .initial
            .as_ref()
            .ok_or_else(|| CliError::Config("missing section [initial]".into()))?;
        match (&init.state, &init.pi0) {
            (Some([m, n]), None) => {
                let i = space.index_of(*m, *n).ok_or_else(|| {
                    CliError::Config(format!(
                        "initial.state ({m}, {n}) is outside the capacities"
                    ))
                })?;
                let mut v = vec![0.0; space.len()];
                v[i] = 1.0;
                Ok(v)
            }
            (None, Some(p)) => {
                if p.len() != space.len() {
                    return Err(CliError::Config(format!(
                        "initial.pi0 has {} entries, the state space has {}",
                        p.len(),
                        space.len()
                    )));
                }
                Ok(p.clone())
            }
            _ => Err(CliError::Config(
                "initial: give exactly one of `state` or `pi0`".into(),
            )),
        }
    }

    /// Initial joint state of a cable.
    pub fn initial_cable(&self, n_cells: usize) -> Result<CableState> {
        let init = self
            .initial
            .as_ref()
            .ok_or_else(|| CliError::Config("missing section [initial]".into()))?;
        let cells = init
            .cells
            .as_ref()
            .ok_or_else(|| CliError::Config("initial.cells is required in cable mode".into()))?;
        if cells.len() != n_cells {
            return Err(CliError::Config(format!(
                "initial.cells has {} entries for {n_cells} cells",
                cells.len()
            )));
        }
        let pools = init.pools.clone().unwrap_or_else(|| vec![0; n_cells + 1]);
        if pools.len() != n_cells + 1 {
            return Err(CliError::Config(format!(
                "initial.pools needs {} entries, got {}",
                n_cells + 1,
                pools.len()
            )));
        }
        Ok(CableState {
            cells: cells.iter().map(|c| (c[0], c[1])).collect(),
            pools,
        })
    }
}
