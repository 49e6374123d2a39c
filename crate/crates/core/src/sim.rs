//! Exact event-driven simulation (Gillespie direct method) of an isolated
//! cell or a cable.
//!
//! From state `i` the waiting time is exponential with the total rate `R_i`
//! of the active profile segment and the event is drawn with probability
//! `λ_{i,j} / R_i`. A waiting time that crosses a segment boundary is
//! discarded and redrawn from the boundary under the new rates; this is exact
//! because the exponential clock is memoryless. Beyond the profile end the
//! last segment stays in force.
//!
//! Each trajectory owns a ChaCha8 stream: the master seed keys the generator
//! and the trajectory index selects the stream, so ensembles are reproducible
//! however they are partitioned.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::kinetics::{
    apply_cable_event, apply_isolated_event, cable_rates, isolated_terms, EventKind,
    ExternalProfile, ExternalState, RateModel,
};
use crate::linalg::NeumaierSum;
use crate::state::{CableState, CellState, IsolatedSpace, Pools};

/// Generator of trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Uniform in `[0, 1)`.
#[inline]
fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential waiting time with the given rate.
#[inline]
fn exponential(rng: &mut impl RngCore, rate: f64) -> f64 {
    -libm::log(1.0 - uniform(rng)) / rate
}

/// Index drawn from unnormalized `weights` summing to `total`.
fn pick(rng: &mut impl RngCore, weights: impl Iterator<Item = f64>, total: f64) -> usize {
    let target = uniform(rng) * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if target < acc {
            return k;
        }
    }
    last
}

/// One logged event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub cell: usize,
    /// State of `cell` right after the event.
    pub state: CellState,
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    /// Still alive at the horizon.
    Alive,
    /// Absorbed in DEAD at this time.
    Dead { time: f64 },
}

/// Event log of one isolated-cell run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Pools,
    pub horizon: f64,
    pub events: Vec<EventRecord>,
    pub terminal: Terminal,
}

impl Trajectory {
    /// State in force at time `t`.
    pub fn state_at(&self, t: f64) -> CellState {
        let k = self.events.partition_point(|e| e.time <= t);
        if k == 0 {
            CellState::Alive(self.initial)
        } else {
            self.events[k - 1].state
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    kind: EventKind,
    target: Option<usize>,
    rate: f64,
}

/// Enabled transitions of every isolated state under one external state.
#[derive(Debug, Clone)]
struct EventTable {
    rows: Vec<Vec<Transition>>,
    total: Vec<f64>,
}

impl EventTable {
    fn build(space: &IsolatedSpace, model: &RateModel, ext: &ExternalState) -> Self {
        let mut rows = Vec::with_capacity(space.len());
        let mut total = Vec::with_capacity(space.len());
        for i in 0..space.len() {
            let (m, n) = space.levels(i);
            let row: Vec<Transition> = isolated_terms(m, n, ext, model)
                .into_iter()
                .map(|(kind, term)| Transition {
                    kind,
                    target: apply_isolated_event(m, n, kind)
                        .and_then(|(m2, n2)| space.index_of(m2, n2)),
                    rate: term.eval(&model.params),
                })
                .filter(|t| t.rate > 0.0)
                .collect();
            total.push(row.iter().map(|t| t.rate).sum());
            rows.push(row);
        }
        Self { rows, total }
    }
}

/// Per-segment event tables, built on first use.
#[derive(Debug, Clone)]
struct IsolatedEngine<'a> {
    space: IsolatedSpace,
    model: &'a RateModel,
    profile: &'a ExternalProfile,
    tables: Vec<Option<EventTable>>,
}

impl<'a> IsolatedEngine<'a> {
    fn new(model: &'a RateModel, profile: &'a ExternalProfile) -> Result<Self> {
        model.validate()?;
        let space = IsolatedSpace::new(model.caps)?;
        Ok(Self {
            space,
            model,
            profile,
            tables: vec![None; profile.segments().len()],
        })
    }

    fn table(&mut self, seg: usize) -> &EventTable {
        let (space, model, ext) = (&self.space, self.model, &self.profile.segments()[seg].ext);
        self.tables[seg].get_or_insert_with(|| EventTable::build(space, model, ext))
    }

    fn segment_end(&self, seg: usize) -> f64 {
        let segs = self.profile.segments();
        if seg + 1 == segs.len() {
            f64::INFINITY
        } else {
            segs[seg].end
        }
    }

    /// Runs one trajectory from state index `start`, calling `on_event` with
    /// `(time, kind, post-state index or None for DEAD)` for each event.
    fn run(
        &mut self,
        start: usize,
        horizon: f64,
        rng: &mut impl RngCore,
        mut on_event: impl FnMut(f64, EventKind, Option<usize>),
    ) -> Terminal {
        let mut t = 0.0;
        let mut seg = 0;
        let mut i = start;
        loop {
            let seg_end = self.segment_end(seg);
            let table = self.table(seg);
            let total = table.total[i];
            if total <= 0.0 {
                if seg_end >= horizon {
                    return Terminal::Alive;
                }
                t = seg_end;
                seg += 1;
                continue;
            }
            let next = t + exponential(rng, total);
            if next >= seg_end {
                if seg_end >= horizon {
                    return Terminal::Alive;
                }
                t = seg_end;
                seg += 1;
                continue;
            }
            if next > horizon {
                return Terminal::Alive;
            }
            t = next;
            let row = &table.rows[i];
            let k = pick(rng, row.iter().map(|tr| tr.rate), total);
            let tr = row[k];
            on_event(t, tr.kind, tr.target);
            match tr.target {
                Some(j) => i = j,
                None => return Terminal::Dead { time: t },
            }
        }
    }
}

/// Simulates one isolated cell from `init` up to `horizon` (may be infinite
/// when death is certain).
pub fn simulate(
    model: &RateModel,
    profile: &ExternalProfile,
    init: Pools,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive"));
    }
    let mut engine = IsolatedEngine::new(model, profile)?;
    let start = engine
        .space
        .index(&init)
        .ok_or(Error::InvalidArgument("initial state outside capacities"))?;
    let mut rng = trajectory_rng(seed, 0);
    let mut events = Vec::new();
    let space = engine.space;
    let caps = model.caps;
    let terminal = engine.run(start, horizon, &mut rng, |time, kind, target| {
        let state = match target {
            Some(j) => {
                let (m, n) = space.levels(j);
                CellState::Alive(Pools::isolated(m, n, &caps))
            }
            None => CellState::Dead,
        };
        events.push(EventRecord {
            time,
            kind,
            cell: 0,
            state,
        });
    });
    Ok(Trajectory {
        initial: Pools::isolated(init.m_ch, init.n_atp, &caps),
        horizon,
        events,
        terminal,
    })
}

/// Per-time ensemble moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub n_traj: u64,
    /// Mean and variance over the trajectories still alive at each time.
    pub mean_m: Vec<f64>,
    pub var_m: Vec<f64>,
    pub mean_n: Vec<f64>,
    pub var_n: Vec<f64>,
    /// Fraction of trajectories dead by each time.
    pub death_fraction: Vec<f64>,
    /// Visit counts per time and transient state index.
    pub occupancy: Vec<Vec<u64>>,
    /// Absorption times of the trajectories that died before the horizon.
    pub death_times: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Moments {
    sum: NeumaierSum,
    sum_sq: NeumaierSum,
}

impl Moments {
    fn add(&mut self, v: f64) {
        self.sum.add(v);
        self.sum_sq.add(v * v);
    }

    fn mean_var(&self, count: u64) -> (f64, f64) {
        if count == 0 {
            return (0.0, 0.0);
        }
        let c = count as f64;
        let mean = self.sum.value() / c;
        let var = (self.sum_sq.value() / c - mean * mean).max(0.0);
        (mean, var)
    }
}

/// Samples a state index from a distribution over transient states.
pub fn sample_index(dist: &[f64], rng: &mut impl RngCore) -> usize {
    let total: f64 = dist.iter().sum();
    pick(rng, dist.iter().copied(), total)
}

fn validate_distribution(dist: &[f64], n: usize) -> Result<()> {
    if dist.len() != n {
        return Err(Error::InvalidDistribution(
            "length must match the state space",
        ));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidDistribution(
            "entries must be finite and non-negative",
        ));
    }
    let s: f64 = dist.iter().sum();
    if !(s > 0.0) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution("entries must sum to one"));
    }
    Ok(())
}

/// Runs `n_traj` isolated-cell trajectories with initial states drawn from
/// `init_dist` and records occupancy and moments at `times` (non-decreasing,
/// all at most `horizon`). Trajectory `k` uses stream `k` of `master_seed`.
pub fn simulate_ensemble(
    model: &RateModel,
    profile: &ExternalProfile,
    init_dist: &[f64],
    times: &[f64],
    horizon: f64,
    n_traj: u64,
    master_seed: u64,
) -> Result<EnsembleStats> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("at least one trajectory required"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| !(t >= 0.0) || t > horizon) {
        return Err(Error::InvalidArgument(
            "sample times must be non-decreasing and within the horizon",
        ));
    }
    let mut engine = IsolatedEngine::new(model, profile)?;
    let space = engine.space;
    validate_distribution(init_dist, space.len())?;

    let nt = times.len();
    let mut occupancy = vec![vec![0u64; space.len()]; nt];
    let mut dead = vec![0u64; nt];
    let mut m_mom = vec![Moments::default(); nt];
    let mut n_mom = vec![Moments::default(); nt];
    let mut death_times = Vec::new();

    for k in 0..n_traj {
        let mut rng = trajectory_rng(master_seed, k);
        let start = sample_index(init_dist, &mut rng);
        let mut cursor = 0usize;
        let mut current = Some(start);
        let mut record = |upto: f64, inclusive: bool, state: Option<usize>, cursor: &mut usize| {
            while *cursor < nt && (times[*cursor] < upto || (inclusive && times[*cursor] <= upto)) {
                match state {
                    Some(i) => {
                        occupancy[*cursor][i] += 1;
                        let (m, n) = space.levels(i);
                        m_mom[*cursor].add(m as f64);
                        n_mom[*cursor].add(n as f64);
                    }
                    None => dead[*cursor] += 1,
                }
                *cursor += 1;
            }
        };
        let terminal = engine.run(start, horizon, &mut rng, |t, _, target| {
            record(t, false, current, &mut cursor);
            current = target;
        });
        if let Terminal::Dead { time } = terminal {
            death_times.push(time);
        }
        record(f64::INFINITY, true, current, &mut cursor);
    }

    let mut stats = EnsembleStats {
        times: times.to_vec(),
        n_traj,
        mean_m: Vec::with_capacity(nt),
        var_m: Vec::with_capacity(nt),
        mean_n: Vec::with_capacity(nt),
        var_n: Vec::with_capacity(nt),
        death_fraction: Vec::with_capacity(nt),
        occupancy,
        death_times,
    };
    for s in 0..nt {
        let alive = n_traj - dead[s];
        let (mm, vm) = m_mom[s].mean_var(alive);
        let (mn, vn) = n_mom[s].mean_var(alive);
        stats.mean_m.push(mm);
        stats.var_m.push(vm);
        stats.mean_n.push(mn);
        stats.var_n.push(vn);
        stats.death_fraction.push(dead[s] as f64 / n_traj as f64);
    }
    Ok(stats)
}

/// Absorption times of `n_traj` trajectories run to death (infinite horizon).
/// Fails if a trajectory reaches a state with no outflow, since it would
/// never die.
pub fn sample_lifetimes(
    model: &RateModel,
    profile: &ExternalProfile,
    init_dist: &[f64],
    n_traj: u64,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let mut engine = IsolatedEngine::new(model, profile)?;
    validate_distribution(init_dist, engine.space.len())?;
    let mut out = Vec::with_capacity(n_traj as usize);
    for k in 0..n_traj {
        let mut rng = trajectory_rng(master_seed, k);
        let start = sample_index(init_dist, &mut rng);
        match engine.run(start, f64::INFINITY, &mut rng, |_, _, _| {}) {
            Terminal::Dead { time } => out.push(time),
            Terminal::Alive => {
                return Err(Error::InvalidArgument(
                    "a trajectory reached a state without outflow",
                ))
            }
        }
    }
    Ok(out)
}

/// Electron bookkeeping of one membrane pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolLedger {
    pub initial: u32,
    pub inflow: u64,
    pub outflow: u64,
    pub last: u32,
}

impl PoolLedger {
    /// `inflow = outflow + (last − initial)`.
    pub fn balances(&self) -> bool {
        self.inflow as i128 == self.outflow as i128 + self.last as i128 - self.initial as i128
    }
}

/// Event log of a cable run plus its per-pool electron ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct CableTrajectory {
    pub initial: CableState,
    pub horizon: f64,
    pub events: Vec<EventRecord>,
    pub terminal: Terminal,
    pub final_state: CableState,
    /// One entry per membrane pool, pool 0 first. Interior entries are the
    /// shared pools between adjacent cells.
    pub ledger: Vec<PoolLedger>,
}

impl CableTrajectory {
    pub fn ledger_balances(&self) -> bool {
        self.ledger.iter().all(PoolLedger::balances)
    }
}

/// Simulates a cable. `profiles` holds one profile per cell or a single
/// profile shared by all cells. The first cell death absorbs the run.
/// `max_events` caps the log length (the run stops alive when reached).
pub fn simulate_cable(
    model: &RateModel,
    profiles: &[ExternalProfile],
    init: CableState,
    horizon: f64,
    seed: u64,
    max_events: Option<usize>,
) -> Result<CableTrajectory> {
    model.validate()?;
    let n = init.n_cells();
    if n == 0 {
        return Err(Error::InvalidArgument("a cable needs at least one cell"));
    }
    if !(profiles.len() == n || profiles.len() == 1) {
        return Err(Error::Dimension(
            "one profile per cell, or one shared profile",
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive"));
    }
    let space = crate::state::CableSpace::with_dense_bound(model.caps, n, 0)?;
    if !space.contains(&init) {
        return Err(Error::InvalidArgument(
            "initial cable state outside capacities",
        ));
    }
    let profile_of = |cell: usize| {
        if profiles.len() == 1 {
            &profiles[0]
        } else {
            &profiles[cell]
        }
    };

    let mut rng = trajectory_rng(seed, 0);
    let mut state = init.clone();
    let mut ledger: Vec<PoolLedger> = init
        .pools
        .iter()
        .map(|&q| PoolLedger {
            initial: q,
            inflow: 0,
            outflow: 0,
            last: q,
        })
        .collect();
    let mut events = Vec::new();
    let mut seg: Vec<usize> = vec![0; n];
    let mut t = 0.0;
    let cap = max_events.unwrap_or(usize::MAX);

    let terminal = loop {
        let exts: Vec<ExternalState> = (0..n)
            .map(|c| profile_of(c).segments()[seg[c]].ext)
            .collect();
        let boundary = (0..n)
            .map(|c| {
                let segs = profile_of(c).segments();
                if seg[c] + 1 == segs.len() {
                    f64::INFINITY
                } else {
                    segs[seg[c]].end
                }
            })
            .fold(f64::INFINITY, f64::min);
        let enabled = cable_rates(&state, &exts, model)?;
        let total: f64 = enabled.iter().map(|e| e.rate).sum();
        let next = if total > 0.0 {
            t + exponential(&mut rng, total)
        } else {
            f64::INFINITY
        };
        if next >= boundary {
            if boundary >= horizon {
                break Terminal::Alive;
            }
            t = boundary;
            for c in 0..n {
                let segs = profile_of(c).segments();
                while seg[c] + 1 < segs.len() && segs[seg[c]].end <= t {
                    seg[c] += 1;
                }
            }
            continue;
        }
        if next > horizon || events.len() >= cap {
            break Terminal::Alive;
        }
        t = next;
        let e = enabled[pick(&mut rng, enabled.iter().map(|e| e.rate), total)];
        if e.kind == EventKind::Death {
            events.push(EventRecord {
                time: t,
                kind: e.kind,
                cell: e.cell,
                state: CellState::Dead,
            });
            break Terminal::Dead { time: t };
        }
        apply_cable_event(&mut state, e.kind, e.cell);
        match e.kind {
            EventKind::AnaerobicSynthesis | EventKind::HeemAnaerobicSynthesis => {
                ledger[e.cell + 1].inflow += 1
            }
            EventKind::Iet => ledger[0].inflow += 1,
            _ => {}
        }
        match e.kind {
            EventKind::HeemAerobicSynthesis | EventKind::HeemAnaerobicSynthesis => {
                ledger[e.cell].outflow += 1
            }
            EventKind::Drain => ledger[n].outflow += 1,
            _ => {}
        }
        events.push(EventRecord {
            time: t,
            kind: e.kind,
            cell: e.cell,
            state: CellState::Alive(state.cell(e.cell)),
        });
    };
    for (l, &q) in ledger.iter_mut().zip(&state.pools) {
        l.last = q;
    }
    Ok(CableTrajectory {
        initial: init,
        horizon,
        events,
        terminal,
        final_state: state,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{DeathRate, ParamVector};
    use crate::state::Capacities;

    fn constant(ext: ExternalState) -> ExternalProfile {
        ExternalProfile::constant(ext, 1e9).unwrap()
    }

    #[test]
    fn no_rates_means_no_events() {
        let model = RateModel::isolated(
            ParamVector::new(0.0, 0.0, 0.0, 0.0).unwrap(),
            Capacities::isolated(3, 3).unwrap(),
        )
        .unwrap();
        let profile = constant(ExternalState::donor(10.0).unwrap());
        let tr = simulate(
            &model,
            &profile,
            Pools::isolated(1, 1, &model.caps),
            100.0,
            7,
        )
        .unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.terminal, Terminal::Alive);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let model = RateModel::isolated(
            ParamVector::new(0.1, 0.2, 0.3, 0.05).unwrap(),
            Capacities::isolated(4, 4).unwrap(),
        )
        .unwrap()
        .with_death(DeathRate::Constant(0.01))
        .unwrap();
        let profile = constant(ExternalState::donor(2.0).unwrap());
        let a = simulate(
            &model,
            &profile,
            Pools::isolated(2, 2, &model.caps),
            200.0,
            42,
        )
        .unwrap();
        let b = simulate(
            &model,
            &profile,
            Pools::isolated(2, 2, &model.caps),
            200.0,
            42,
        )
        .unwrap();
        let c = simulate(
            &model,
            &profile,
            Pools::isolated(2, 2, &model.caps),
            200.0,
            43,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn legal_moves_only() {
        let model = RateModel::isolated(
            ParamVector::new(0.1, 0.2, 0.3, 0.05).unwrap(),
            Capacities::isolated(4, 4).unwrap(),
        )
        .unwrap()
        .with_death(DeathRate::Constant(1e-5))
        .unwrap();
        let profile = constant(ExternalState::donor(2.0).unwrap());
        let tr = simulate(
            &model,
            &profile,
            Pools::isolated(2, 2, &model.caps),
            5_000.0,
            3,
        )
        .unwrap();
        assert!(tr.events.len() > 100);
        let mut prev = CellState::Alive(tr.initial);
        let mut last_t = 0.0;
        for e in &tr.events {
            assert!(e.time > last_t);
            last_t = e.time;
            let p = *prev.pools().expect("no events after death");
            match e.state {
                CellState::Dead => assert_eq!(e.kind, EventKind::Death),
                CellState::Alive(q) => {
                    let dm = q.m_ch as i64 - p.m_ch as i64;
                    let dn = q.n_atp as i64 - p.n_atp as i64;
                    assert!(
                        matches!((dm, dn), (1, 0) | (-1, 1) | (0, -1)),
                        "illegal move {p} -> {q}"
                    );
                }
            }
            prev = e.state;
        }
    }

    #[test]
    fn ledger_counts_pool_traffic() {
        let caps = Capacities::new(2, 2, 2, 2).unwrap();
        let coeffs = crate::kinetics::CableCoefficients {
            anaerobic: 0.5,
            heem_aerobic: 0.3,
            heem_anaerobic: 0.4,
            source: 0.2,
            sink: 0.6,
        };
        let model = RateModel::cable(
            ParamVector::new(0.1, 0.2, 0.3, 0.1).unwrap(),
            caps,
            coeffs,
            2,
        )
        .unwrap();
        let init = CableState {
            cells: vec![(1, 1), (0, 2)],
            pools: vec![0, 1, 2],
        };
        let profile = constant(ExternalState::new(1.0, 0.5).unwrap());
        let tr = simulate_cable(&model, &[profile], init, 1e6, 11, Some(2000)).unwrap();
        assert_eq!(tr.events.len(), 2000);
        assert!(tr.ledger_balances());
        assert!(tr.ledger[1].inflow > 0 && tr.ledger[1].outflow > 0);
    }
}
