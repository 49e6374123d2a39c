//! Poisson event rates of the cell model.
//!
//! Every rate is affine in the parameter vector `x = [γ, ρ, ζ, β]`: the
//! state and the external concentrations only enter through coefficients.
//! Saturation rules are applied after evaluating the formula: an event whose
//! source queue is empty or whose destination queue is full gets all
//! coefficients zeroed, so no parameter value can push mass through a
//! closed queue.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::state::{CableState, Capacities, Pools};

/// External concentrations seen by a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalState {
    /// Electron donor concentration (mM).
    pub sigma_d: f64,
    /// Electron acceptor concentration. `1.0` is the "sufficient" level at
    /// which the aerobic exit runs at its nominal rate.
    pub sigma_a: f64,
}

impl ExternalState {
    pub const SUFFICIENT_ACCEPTOR: f64 = 1.0;

    pub fn new(sigma_d: f64, sigma_a: f64) -> Result<Self> {
        let ext = Self { sigma_d, sigma_a };
        ext.validate()?;
        Ok(ext)
    }

    /// Donor at `sigma_d`, acceptor at the sufficient level.
    pub fn donor(sigma_d: f64) -> Result<Self> {
        Self::new(sigma_d, Self::SUFFICIENT_ACCEPTOR)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d.is_finite() && self.sigma_d >= 0.0) {
            return Err(Error::InvalidExternalState(
                "sigma_D must be finite and non-negative",
            ));
        }
        if !(self.sigma_a.is_finite() && self.sigma_a >= 0.0) {
            return Err(Error::InvalidExternalState(
                "sigma_A must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// One constant piece `[start, end)` of an external profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub ext: ExternalState,
}

/// Piecewise-constant external state over `[0, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalProfile {
    segments: Vec<Segment>,
}

impl ExternalProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or(Error::InvalidProfile("profile has no segments"))?;
        if first.start != 0.0 {
            return Err(Error::InvalidProfile("first segment must start at t = 0"));
        }
        for (k, s) in segments.iter().enumerate() {
            s.ext.validate()?;
            if !(s.start.is_finite() && s.end.is_finite()) {
                return Err(Error::InvalidProfile("segment bounds must be finite"));
            }
            if !(s.start < s.end) {
                return Err(Error::InvalidProfile("segment start must precede its end"));
            }
            if k > 0 {
                let prev = segments[k - 1].end;
                if s.start < prev {
                    return Err(Error::InvalidProfile("segments overlap"));
                }
                if s.start > prev {
                    return Err(Error::InvalidProfile("segments leave a gap"));
                }
            }
        }
        Ok(Self { segments })
    }

    /// A single segment `[0, end)`.
    pub fn constant(ext: ExternalState, end: f64) -> Result<Self> {
        Self::new(alloc::vec![Segment {
            start: 0.0,
            end,
            ext
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    /// Segment in force at `t`. The profile end itself belongs to the last
    /// segment.
    pub fn segment_index_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument("time must be non-negative"));
        }
        if t > self.end() {
            return Err(Error::BeyondProfile { t, end: self.end() });
        }
        let k = self.segments.partition_point(|s| s.end <= t);
        Ok(k.min(self.segments.len() - 1))
    }

    pub fn at(&self, t: f64) -> Result<ExternalState> {
        Ok(self.segments[self.segment_index_at(t)?].ext)
    }

    /// Same profile with the segment containing `t` cut in two at `t`.
    /// Cutting at an existing boundary is a no-op.
    pub fn split_at(&self, t: f64) -> Result<Self> {
        let k = self.segment_index_at(t)?;
        let s = self.segments[k];
        if t <= s.start || t >= s.end {
            return Ok(self.clone());
        }
        let mut segments = self.segments.clone();
        segments[k].end = t;
        segments.insert(
            k + 1,
            Segment {
                start: t,
                end: s.end,
                ext: s.ext,
            },
        );
        Self::new(segments)
    }

    /// Appends `pieces` constant pieces approximating a linear donor ramp from
    /// `from` at `start` to `to` at `end`. Each piece takes the ramp value at
    /// its left endpoint.
    pub fn push_linear_ramp(
        segments: &mut Vec<Segment>,
        start: f64,
        end: f64,
        from: f64,
        to: f64,
        sigma_a: f64,
        pieces: usize,
    ) -> Result<()> {
        if pieces == 0 || !(start < end) {
            return Err(Error::InvalidProfile(
                "a ramp needs a positive length and piece count",
            ));
        }
        let width = (end - start) / pieces as f64;
        for p in 0..pieces {
            let a = start + width * p as f64;
            let b = if p + 1 == pieces {
                end
            } else {
                start + width * (p + 1) as f64
            };
            let frac = (a - start) / (end - start);
            let sigma_d = from + (to - from) * frac;
            segments.push(Segment {
                start: a,
                end: b,
                ext: ExternalState::new(sigma_d.max(0.0), sigma_a)?,
            });
        }
        Ok(())
    }

    /// Donor switched on at `on` to `peak`, decaying linearly to zero at
    /// `off`, followed by starvation until `end`. The ramp is cut into pieces
    /// of width `piece`.
    pub fn pulse_with_linear_decay(
        on: f64,
        off: f64,
        end: f64,
        peak: f64,
        piece: f64,
    ) -> Result<Self> {
        if !(0.0 < on && on < off && off <= end && piece > 0.0) {
            return Err(Error::InvalidProfile(
                "need 0 < on < off <= end and a positive piece width",
            ));
        }
        let sufficient = ExternalState::SUFFICIENT_ACCEPTOR;
        let mut segments = alloc::vec![Segment {
            start: 0.0,
            end: on,
            ext: ExternalState::new(0.0, sufficient)?
        }];
        let pieces = libm::ceil((off - on) / piece - 1e-9).max(1.0) as usize;
        Self::push_linear_ramp(&mut segments, on, off, peak, 0.0, sufficient, pieces)?;
        if end > off {
            segments.push(Segment {
                start: off,
                end,
                ext: ExternalState::new(0.0, sufficient)?,
            });
        }
        Self::new(segments)
    }
}

/// Parameter vector `[γ, ρ, ζ, β]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamVector {
    /// Donor-driven NADH generation (units/mM/s).
    pub gamma: f64,
    /// NAD-headroom-weighted NADH generation (units/mM/s).
    pub rho: f64,
    /// ATP synthase rate at full ADP (units/s).
    pub zeta: f64,
    /// Donor-regulated ATP consumption (units/mM/s).
    pub beta: f64,
}

impl ParamVector {
    pub const LEN: usize = 4;
    pub const NAMES: [&'static str; 4] = ["gamma", "rho", "zeta", "beta"];

    pub fn new(gamma: f64, rho: f64, zeta: f64, beta: f64) -> Result<Self> {
        let x = Self {
            gamma,
            rho,
            zeta,
            beta,
        };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .as_array()
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidParams(
                "parameters must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.gamma, self.rho, self.zeta, self.beta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            gamma: a[0],
            rho: a[1],
            zeta: a[2],
            beta: a[3],
        }
    }

    /// Componentwise `max(v, 0)`.
    pub fn project(a: [f64; 4]) -> Self {
        Self::from_array(a.map(|v| v.max(0.0)))
    }
}

/// Rate coefficients for the membrane pathways that only exist in a cable.
/// All rates are in units/s and are switched off by the usual saturation
/// rules. The ADP headroom factor `(1 - n_atp / N_AXP)` multiplies every
/// synthesis branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CableCoefficients {
    /// Conventional synthesis with the electron exiting to the LEEM.
    pub anaerobic: f64,
    /// Synthesis from the HEEM with aerobic exit; scaled by `sigma_a`.
    pub heem_aerobic: f64,
    /// Synthesis from the HEEM with the electron exiting to the LEEM.
    pub heem_anaerobic: f64,
    /// Electrode inflow into the HEEM of the first cell.
    pub source: f64,
    /// Drain from the LEEM of the last cell to a terminal acceptor.
    pub sink: f64,
}

impl CableCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.anaerobic,
            self.heem_aerobic,
            self.heem_anaerobic,
            self.source,
            self.sink,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams(
                "cable coefficients must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Death rate `δ(s_I; s_E)`.
#[derive(Clone, Default)]
pub enum DeathRate {
    #[default]
    Zero,
    Constant(f64),
    /// Table over `(m_ch, n_atp)` in isolated-index order.
    PerLevel(Vec<f64>),
    Custom(Arc<dyn Fn(&Pools, &ExternalState) -> f64 + Send + Sync>),
}

impl fmt::Debug for DeathRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeathRate::Zero => write!(f, "Zero"),
            DeathRate::Constant(r) => f.debug_tuple("Constant").field(r).finish(),
            DeathRate::PerLevel(t) => f.debug_tuple("PerLevel").field(&t.len()).finish(),
            DeathRate::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl DeathRate {
    pub fn rate(&self, pools: &Pools, ext: &ExternalState, caps: &Capacities) -> f64 {
        let r = match self {
            DeathRate::Zero => 0.0,
            DeathRate::Constant(r) => *r,
            DeathRate::PerLevel(table) => {
                let i = pools.m_ch as usize * (caps.n_axp as usize + 1) + pools.n_atp as usize;
                table.get(i).copied().unwrap_or(0.0)
            }
            DeathRate::Custom(f) => f(pools, ext),
        };
        if r.is_finite() && r > 0.0 {
            r
        } else {
            0.0
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DeathRate::Zero => true,
            DeathRate::Constant(r) => !(*r > 0.0),
            DeathRate::PerLevel(t) => t.iter().all(|r| !(*r > 0.0)),
            DeathRate::Custom(_) => false,
        }
    }

    fn validate(&self, caps: &Capacities) -> Result<()> {
        match self {
            DeathRate::Constant(r) if !(r.is_finite() && *r >= 0.0) => Err(Error::InvalidParams(
                "death rate must be finite and non-negative",
            )),
            DeathRate::PerLevel(t) => {
                if t.len() != (caps.m_ch as usize + 1) * (caps.n_axp as usize + 1) {
                    return Err(Error::InvalidParams(
                        "death table length must be (M_CH+1)(N_AXP+1)",
                    ));
                }
                if t.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err(Error::InvalidParams(
                        "death rates must be finite and non-negative",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Kind of a single transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    /// Donor electron enters the IECP.
    EdDiffusion,
    /// Electrode electron enters the HEEM of the first cell.
    Iet,
    /// IECP → ATP, electron exits to the acceptor.
    AerobicSynthesis,
    /// IECP → ATP, electron exits to the LEEM.
    AnaerobicSynthesis,
    /// HEEM → ATP, electron exits to the acceptor.
    HeemAerobicSynthesis,
    /// HEEM → ATP, electron exits to the LEEM.
    HeemAnaerobicSynthesis,
    AtpConsumption,
    /// Last LEEM → terminal acceptor.
    Drain,
    Death,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::EdDiffusion,
        EventKind::Iet,
        EventKind::AerobicSynthesis,
        EventKind::AnaerobicSynthesis,
        EventKind::HeemAerobicSynthesis,
        EventKind::HeemAnaerobicSynthesis,
        EventKind::AtpConsumption,
        EventKind::Drain,
        EventKind::Death,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::EdDiffusion => "ed_diffusion",
            EventKind::Iet => "iet",
            EventKind::AerobicSynthesis => "aerobic_synthesis",
            EventKind::AnaerobicSynthesis => "anaerobic_synthesis",
            EventKind::HeemAerobicSynthesis => "heem_aerobic_synthesis",
            EventKind::HeemAnaerobicSynthesis => "heem_anaerobic_synthesis",
            EventKind::AtpConsumption => "atp_consumption",
            EventKind::Drain => "drain",
            EventKind::Death => "death",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_synthesis(&self) -> bool {
        matches!(
            self,
            EventKind::AerobicSynthesis
                | EventKind::AnaerobicSynthesis
                | EventKind::HeemAerobicSynthesis
                | EventKind::HeemAnaerobicSynthesis
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine rate `coeffs · x + constant`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerm {
    pub coeffs: [f64; 4],
    pub constant: f64,
}

impl RateTerm {
    pub const ZERO: RateTerm = RateTerm {
        coeffs: [0.0; 4],
        constant: 0.0,
    };

    #[inline]
    pub fn eval(&self, x: &ParamVector) -> f64 {
        let a = x.as_array();
        self.coeffs[0] * a[0]
            + self.coeffs[1] * a[1]
            + self.coeffs[2] * a[2]
            + self.coeffs[3] * a[3]
            + self.constant
    }

    fn gated(self, open: bool) -> Self {
        if open {
            self
        } else {
            Self::ZERO
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.coeffs.iter().all(|c| *c == 0.0)
    }
}

/// How the state space is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Isolated,
    Cable { n_cells: usize },
}

/// Parametric flow model of a cell (or of every cell of a cable).
#[derive(Debug, Clone)]
pub struct RateModel {
    pub params: ParamVector,
    pub caps: Capacities,
    pub death: DeathRate,
    pub cable: CableCoefficients,
    pub mode: Mode,
}

impl RateModel {
    /// Isolated cell with zero death rate.
    pub fn isolated(params: ParamVector, caps: Capacities) -> Result<Self> {
        let m = Self {
            params,
            caps,
            death: DeathRate::Zero,
            cable: CableCoefficients::default(),
            mode: Mode::Isolated,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn cable(
        params: ParamVector,
        caps: Capacities,
        cable: CableCoefficients,
        n_cells: usize,
    ) -> Result<Self> {
        let m = Self {
            params,
            caps,
            death: DeathRate::Zero,
            cable,
            mode: Mode::Cable { n_cells },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_death(mut self, death: DeathRate) -> Result<Self> {
        death.validate(&self.caps)?;
        self.death = death;
        Ok(self)
    }

    pub fn with_params(&self, params: ParamVector) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.caps.validate()?;
        self.cable.validate()?;
        self.death.validate(&self.caps)?;
        if let Mode::Cable { n_cells: 0 } = self.mode {
            return Err(Error::InvalidCapacity("a cable needs at least one cell"));
        }
        Ok(())
    }
}

/// Affine terms of every event of one cell, before pruning zero rates.
/// Entries are `(kind, term)`; boundary events of a cable are added
/// separately.
fn cell_terms(p: &Pools, ext: &ExternalState, model: &RateModel) -> [(EventKind, RateTerm); 7] {
    let caps = &model.caps;
    let m_frac = p.m_ch as f64 / caps.m_ch as f64;
    let adp = 1.0 - p.n_atp as f64 / caps.n_axp as f64;

    let iecp_empty = p.m_ch == 0;
    let iecp_full = p.m_ch >= caps.m_ch;
    let atp_empty = p.n_atp == 0;
    let atp_full = p.n_atp >= caps.n_axp;
    let heem_empty = p.q_h == 0;
    // Every LEEM, shared or boundary, has capacity Q_L.
    let leem_full = p.q_l >= caps.q_l;

    let ed = RateTerm {
        coeffs: [ext.sigma_d, (1.0 - m_frac) * ext.sigma_d, 0.0, 0.0],
        constant: 0.0,
    }
    .gated(!iecp_full);
    let aerobic = RateTerm {
        coeffs: [0.0, 0.0, ext.sigma_a * adp, 0.0],
        constant: 0.0,
    }
    .gated(!iecp_empty && !atp_full);
    let anaerobic = RateTerm {
        coeffs: [0.0; 4],
        constant: model.cable.anaerobic * adp,
    }
    .gated(!iecp_empty && !atp_full && !leem_full);
    let heem_aerobic = RateTerm {
        coeffs: [0.0; 4],
        constant: ext.sigma_a * model.cable.heem_aerobic * adp,
    }
    .gated(!heem_empty && !atp_full);
    let heem_anaerobic = RateTerm {
        coeffs: [0.0; 4],
        constant: model.cable.heem_anaerobic * adp,
    }
    .gated(!heem_empty && !atp_full && !leem_full);
    let consumption = RateTerm {
        coeffs: [0.0, 0.0, 0.0, ext.sigma_d],
        constant: 0.0,
    }
    .gated(!atp_empty);
    let death = RateTerm {
        coeffs: [0.0; 4],
        constant: model.death.rate(p, ext, caps),
    };

    [
        (EventKind::EdDiffusion, ed),
        (EventKind::AerobicSynthesis, aerobic),
        (EventKind::AnaerobicSynthesis, anaerobic),
        (EventKind::HeemAerobicSynthesis, heem_aerobic),
        (EventKind::HeemAnaerobicSynthesis, heem_anaerobic),
        (EventKind::AtpConsumption, consumption),
        (EventKind::Death, death),
    ]
}

/// Affine terms of the non-zero events of an isolated cell at `(m_ch, n_atp)`.
pub fn isolated_terms(
    m_ch: u32,
    n_atp: u32,
    ext: &ExternalState,
    model: &RateModel,
) -> Vec<(EventKind, RateTerm)> {
    let p = Pools::isolated(m_ch, n_atp, &model.caps);
    cell_terms(&p, ext, model)
        .into_iter()
        .filter(|(_, t)| !t.is_zero())
        .collect()
}

/// NADH generation `λ_CH = γσ_D + ρ(1 − m_CH/M_CH)σ_D`, zero at a full IECP.
pub fn rate_nadh_gen(state: &Pools, ext: &ExternalState, model: &RateModel) -> f64 {
    let t = cell_terms(state, ext, model)[0].1;
    t.eval(&model.params)
}

/// Conventional ATP synthesis `μ_CH`: aerobic `σ_A ζ(1 − n_ATP/N_AXP)` plus the
/// anaerobic branch (zero for an isolated cell, whose LEEM is full). Zero with
/// an empty IECP or a full ATP pool.
pub fn rate_atp_syn(state: &Pools, ext: &ExternalState, model: &RateModel) -> f64 {
    let terms = cell_terms(state, ext, model);
    terms[1].1.eval(&model.params) + terms[2].1.eval(&model.params)
}

/// ATP consumption `μ_ATP = βσ_D`, zero with an empty ATP pool.
pub fn rate_atp_con(state: &Pools, ext: &ExternalState, model: &RateModel) -> f64 {
    cell_terms(state, ext, model)[5].1.eval(&model.params)
}

/// One enabled transition of a cable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableEvent {
    pub kind: EventKind,
    /// Cell the event belongs to; boundary inflow is attributed to cell 0 and
    /// the drain to the last cell.
    pub cell: usize,
    pub rate: f64,
    pub term: RateTerm,
}

/// Every enabled event of a cable in `state`, in deterministic order (cells
/// in order, then the boundary inflow and drain).
pub fn cable_rates(
    state: &CableState,
    ext_per_cell: &[ExternalState],
    model: &RateModel,
) -> Result<Vec<CableEvent>> {
    let n = state.n_cells();
    if ext_per_cell.len() != n {
        return Err(Error::Dimension("one external state per cell required"));
    }
    if state.pools.len() != n + 1 {
        return Err(Error::Dimension("a cable of n cells has n + 1 pools"));
    }
    let mut events = Vec::with_capacity(6 * n + 2);
    for (i, ext) in ext_per_cell.iter().enumerate() {
        let pools = state.cell(i);
        for (kind, term) in cell_terms(&pools, ext, model) {
            let rate = term.eval(&model.params);
            if rate > 0.0 {
                events.push(CableEvent {
                    kind,
                    cell: i,
                    rate,
                    term,
                });
            }
        }
    }
    let source = RateTerm {
        coeffs: [0.0; 4],
        constant: model.cable.source,
    }
    .gated(state.pools[0] < model.caps.q_h);
    let sink = RateTerm {
        coeffs: [0.0; 4],
        constant: model.cable.sink,
    }
    .gated(state.pools[n] > 0);
    for (kind, cell, term) in [(EventKind::Iet, 0, source), (EventKind::Drain, n - 1, sink)] {
        let rate = term.eval(&model.params);
        if rate > 0.0 {
            events.push(CableEvent {
                kind,
                cell,
                rate,
                term,
            });
        }
    }
    Ok(events)
}

/// Applies a non-death event to a cable state in place.
pub fn apply_cable_event(state: &mut CableState, kind: EventKind, cell: usize) {
    let n = state.n_cells();
    match kind {
        EventKind::EdDiffusion => state.cells[cell].0 += 1,
        EventKind::AerobicSynthesis => {
            state.cells[cell].0 -= 1;
            state.cells[cell].1 += 1;
        }
        EventKind::AnaerobicSynthesis => {
            state.cells[cell].0 -= 1;
            state.cells[cell].1 += 1;
            state.pools[cell + 1] += 1;
        }
        EventKind::HeemAerobicSynthesis => {
            state.pools[cell] -= 1;
            state.cells[cell].1 += 1;
        }
        EventKind::HeemAnaerobicSynthesis => {
            state.pools[cell] -= 1;
            state.cells[cell].1 += 1;
            state.pools[cell + 1] += 1;
        }
        EventKind::AtpConsumption => state.cells[cell].1 -= 1,
        EventKind::Iet => state.pools[0] += 1,
        EventKind::Drain => state.pools[n] -= 1,
        EventKind::Death => {}
    }
}

/// Post-transition `(m_ch, n_atp)` of an isolated cell, `None` for death.
pub fn apply_isolated_event(m_ch: u32, n_atp: u32, kind: EventKind) -> Option<(u32, u32)> {
    match kind {
        EventKind::EdDiffusion => Some((m_ch + 1, n_atp)),
        EventKind::AerobicSynthesis | EventKind::AnaerobicSynthesis => Some((m_ch - 1, n_atp + 1)),
        EventKind::AtpConsumption => Some((m_ch, n_atp - 1)),
        EventKind::HeemAerobicSynthesis | EventKind::HeemAnaerobicSynthesis => {
            Some((m_ch, n_atp + 1))
        }
        EventKind::Iet | EventKind::Drain => Some((m_ch, n_atp)),
        EventKind::Death => None,
    }
}

/// Per-cell flow totals used by the balance identity
/// `μ_CH + μ_EXT^(H) = λ_EXT^(L) + μ_OUT`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisFlows {
    /// Conventional synthesis `μ_CH`.
    pub from_iecp: f64,
    /// Unconventional synthesis `μ_EXT^(H)`.
    pub from_heem: f64,
    /// Anaerobic exit `λ_EXT^(L)`.
    pub to_leem: f64,
    /// Aerobic exit `μ_OUT`.
    pub to_acceptor: f64,
}

/// Synthesis inflow/outflow totals of cell `cell` out of an event list.
pub fn synthesis_flows(events: &[CableEvent], cell: usize) -> SynthesisFlows {
    let mut f = SynthesisFlows::default();
    for e in events.iter().filter(|e| e.cell == cell) {
        match e.kind {
            EventKind::AerobicSynthesis => {
                f.from_iecp += e.rate;
                f.to_acceptor += e.rate;
            }
            EventKind::AnaerobicSynthesis => {
                f.from_iecp += e.rate;
                f.to_leem += e.rate;
            }
            EventKind::HeemAerobicSynthesis => {
                f.from_heem += e.rate;
                f.to_acceptor += e.rate;
            }
            EventKind::HeemAnaerobicSynthesis => {
                f.from_heem += e.rate;
                f.to_leem += e.rate;
            }
            _ => {}
        }
    }
    f
}
