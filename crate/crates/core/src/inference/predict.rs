use alloc::vec::Vec;

use super::{ObservationMap, ATP_MOLECULES_PER_UNIT, NADH_MOLECULES_PER_UNIT};
use crate::error::{Error, Result};
use crate::kinetics::{
    rate_atp_con, rate_atp_syn, rate_nadh_gen, ExternalProfile, Mode, RateModel,
};
use crate::linalg::NeumaierSum;
use crate::state::{IsolatedSpace, Pools, StateIndex};
use crate::transient::{distributions_at, SegmentSystems};

/// Expected levels and event rates on a time grid.
///
/// Levels are in model units and in raw units (`α`-scaled); rates are in
/// molecules per cell per second.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub t: Vec<f64>,
    pub exp_nadh_units: Vec<f64>,
    pub exp_atp_units: Vec<f64>,
    pub exp_nadh_raw: Vec<f64>,
    pub exp_atp_raw: Vec<f64>,
    pub rate_atp_syn: Vec<f64>,
    pub rate_atp_con: Vec<f64>,
    pub rate_nadh_gen: Vec<f64>,
    /// NADH oxidized by synthesis, one unit per synthesized unit of ATP.
    pub rate_nadh_con: Vec<f64>,
}

impl Prediction {
    pub const COLUMNS: [&'static str; 9] = [
        "t",
        "exp_nadh_units",
        "exp_atp_units",
        "exp_nadh_raw",
        "exp_atp_raw",
        "rate_atp_syn",
        "rate_atp_con",
        "rate_nadh_gen",
        "rate_nadh_con",
    ];

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Row `k` in [`Self::COLUMNS`] order.
    pub fn row(&self, k: usize) -> [f64; 9] {
        [
            self.t[k],
            self.exp_nadh_units[k],
            self.exp_atp_units[k],
            self.exp_nadh_raw[k],
            self.exp_atp_raw[k],
            self.rate_atp_syn[k],
            self.rate_atp_con[k],
            self.rate_nadh_gen[k],
            self.rate_nadh_con[k],
        ]
    }
}

/// Expectations under `π0ᵀ P_t` for an isolated cell, with `P_t` on the
/// `delta` grid. `alpha` holds the raw units per model unit for NADH and ATP.
pub fn predict(
    model: &RateModel,
    pi0: &[f64],
    profile: &ExternalProfile,
    grid: &[f64],
    delta: f64,
    alpha: [f64; 2],
) -> Result<Prediction> {
    if !matches!(model.mode, Mode::Isolated) {
        return Err(Error::InvalidArgument(
            "prediction is defined for the isolated cell",
        ));
    }
    let space = IsolatedSpace::new(model.caps)?;
    let systems = SegmentSystems::build(&StateIndex::Isolated(space), model, profile)?;
    let dists = distributions_at(&systems, pi0, grid, delta)?;
    let z = ObservationMap::new(&space);

    let mut out = Prediction::default();
    for (&t, dist) in grid.iter().zip(&dists) {
        let ext = profile.at(t)?;
        let level = z.project(dist);
        let (mut syn, mut con, mut gen) = (
            NeumaierSum::default(),
            NeumaierSum::default(),
            NeumaierSum::default(),
        );
        for (i, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (m, n) = space.levels(i);
            let pools = Pools::isolated(m, n, &model.caps);
            syn.add(p * rate_atp_syn(&pools, &ext, model));
            con.add(p * rate_atp_con(&pools, &ext, model));
            gen.add(p * rate_nadh_gen(&pools, &ext, model));
        }
        out.t.push(t);
        out.exp_nadh_units.push(level[0]);
        out.exp_atp_units.push(level[1]);
        out.exp_nadh_raw.push(level[0] * alpha[0]);
        out.exp_atp_raw.push(level[1] * alpha[1]);
        out.rate_atp_syn.push(syn.value() * ATP_MOLECULES_PER_UNIT);
        out.rate_atp_con.push(con.value() * ATP_MOLECULES_PER_UNIT);
        out.rate_nadh_gen
            .push(gen.value() * NADH_MOLECULES_PER_UNIT);
        out.rate_nadh_con
            .push(syn.value() * NADH_MOLECULES_PER_UNIT);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::ParamVector;
    use crate::state::Capacities;
    use alloc::vec;

    #[test]
    fn initial_levels_are_scaled_observation() {
        let caps = Capacities::isolated(20, 20).unwrap();
        let model = RateModel::isolated(
            ParamVector::new(0.0, 2.31e-3, 4.866e-3, 0.85e-3).unwrap(),
            caps,
        )
        .unwrap();
        let profile =
            ExternalProfile::pulse_with_linear_decay(80.0, 1300.0, 1300.0, 30.0, 10.0).unwrap();
        let mut pi0 = vec![0.0; 441];
        pi0[3 * 21 + 15] = 1.0;
        let p = predict(&model, &pi0, &profile, &[0.0, 100.0], 1.0, [0.64925, 0.18]).unwrap();
        assert_eq!(p.exp_nadh_units[0], 3.0);
        assert_eq!(p.exp_atp_units[0], 15.0);
        assert!((p.exp_atp_raw[0] - 2.7).abs() < 1e-12);
        // No donor before the pulse: no NADH generation, no consumption.
        assert_eq!(p.rate_nadh_gen[0], 0.0);
        assert_eq!(p.rate_atp_con[0], 0.0);
        assert!(p.rate_atp_con[1] > 0.0);
    }
}
