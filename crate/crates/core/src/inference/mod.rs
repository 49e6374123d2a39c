//! Maximum-likelihood estimation of the parameter vector and the initial
//! distribution from NADH/ATP time series.
//!
//! Observations are `y_k = π0ᵀ B_k Z + w_k` with Gaussian `w_k`, where `B_k`
//! is the product of step matrices `I + ΔA` up to sample `k` and `Z` maps a
//! state to its `(m_CH, n_ATP)` levels. The negative log-likelihood is the
//! least-squares cost `½ Σ_k ‖y_k − π0ᵀ B_k Z‖²`. For fixed `x` it is a convex
//! QP in `π0`; for fixed `π0` it is minimized over `x ≥ 0` by projected
//! gradient descent. The two are alternated.

mod fit;
mod objective;
mod predict;
pub mod qp;

pub use fit::{fit, FitOptions, FitResult, FitStatus, StepScaling, TraceEntry};
pub use objective::{fit_pi0, nll, nll_gradient, GradientMethod, Pi0Fit, Problem};
pub use predict::{predict, Prediction};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::state::{Capacities, IsolatedSpace};

/// ATP molecules per model unit.
pub const ATP_MOLECULES_PER_UNIT: f64 = 1.08e8;

/// NADH molecules per model unit.
pub const NADH_MOLECULES_PER_UNIT: f64 = 0.432e8;

/// Full-scale NADH fluorescence (×10⁻⁶) of the reference culture.
pub const NADH_FULL_SCALE: f64 = 12.985;

/// Full-scale ATP concentration (mM) of the reference culture.
pub const ATP_FULL_SCALE: f64 = 3.6;

/// Relative tolerance on the sample spacing.
const SPACING_TOL: f64 = 1e-9;

/// Raw values mapped to the capacities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullScale {
    /// Fluorescence ×10⁻⁶.
    pub nadh_max: f64,
    /// mM.
    pub atp_max: f64,
}

impl Default for FullScale {
    fn default() -> Self {
        Self {
            nadh_max: NADH_FULL_SCALE,
            atp_max: ATP_FULL_SCALE,
        }
    }
}

/// Uniformly sampled observations in model units, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    spacing: f64,
    y: Vec<[f64; 2]>,
    /// Raw units per model unit: fluorescence ×10⁻⁶ for NADH, mM for ATP.
    pub alpha_nadh: f64,
    pub alpha_atp: f64,
}

impl TimeSeries {
    pub fn new(spacing: f64, y: Vec<[f64; 2]>, alpha_nadh: f64, alpha_atp: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidSeries("spacing must be positive"));
        }
        if y.is_empty() {
            return Err(Error::InvalidSeries("at least one sample is required"));
        }
        if y.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidSeries(
                "observations must be finite and non-negative",
            ));
        }
        if !(alpha_nadh > 0.0 && alpha_atp > 0.0) {
            return Err(Error::InvalidSeries(
                "conversion constants must be positive",
            ));
        }
        Ok(Self {
            spacing,
            y,
            alpha_nadh,
            alpha_atp,
        })
    }

    /// Builds a series from explicit timestamps, which must start at zero and
    /// be uniformly spaced.
    pub fn from_samples(
        times: &[f64],
        y: Vec<[f64; 2]>,
        alpha_nadh: f64,
        alpha_atp: f64,
    ) -> Result<Self> {
        if times.len() != y.len() {
            return Err(Error::InvalidSeries(
                "timestamps and observations differ in length",
            ));
        }
        let spacing = uniform_spacing(times)?;
        Self::new(spacing.unwrap_or(1.0), y, alpha_nadh, alpha_atp)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn observations(&self) -> &[[f64; 2]] {
        &self.y
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.spacing
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn last_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Drops samples later than `t_max`.
    pub fn truncated(&self, t_max: f64) -> Self {
        let keep = (0..self.len())
            .take_while(|&k| self.time(k) <= t_max * (1.0 + SPACING_TOL))
            .count()
            .max(1);
        Self {
            y: self.y[..keep].to_vec(),
            ..self.clone()
        }
    }

    /// Observations in raw units.
    pub fn raw(&self) -> Vec<[f64; 2]> {
        self.y
            .iter()
            .map(|y| [y[0] * self.alpha_nadh, y[1] * self.alpha_atp])
            .collect()
    }

    pub fn check_capacities(&self, caps: &Capacities) -> Result<()> {
        let tol = 1e-9;
        if self
            .y
            .iter()
            .any(|y| y[0] > caps.m_ch as f64 + tol || y[1] > caps.n_axp as f64 + tol)
        {
            return Err(Error::InvalidSeries("observations exceed the capacities"));
        }
        Ok(())
    }
}

/// Spacing of uniform timestamps starting at zero; `None` for one sample.
pub fn uniform_spacing(times: &[f64]) -> Result<Option<f64>> {
    let Some(&t0) = times.first() else {
        return Err(Error::InvalidSeries("at least one sample is required"));
    };
    if t0.abs() > 1e-12 {
        return Err(Error::InvalidSeries("the first timestamp must be zero"));
    }
    if times.len() == 1 {
        return Ok(None);
    }
    let spacing = times[1] - times[0];
    if !(spacing > 0.0) {
        return Err(Error::InvalidSeries(
            "timestamps must be strictly increasing",
        ));
    }
    for (k, &t) in times.iter().enumerate() {
        if (t - k as f64 * spacing).abs() > SPACING_TOL * spacing * (k as f64).max(1.0) {
            return Err(Error::InvalidSeries("timestamps are not uniformly spaced"));
        }
    }
    Ok(Some(spacing))
}

/// Maps raw `(NADH fluorescence, ATP mM)` samples onto model units:
/// `y_NADH = NADH / nadh_max · M_CH`, `y_ATP = ATP / atp_max · N_AXP`.
/// Values above full scale are clamped with a warning.
pub fn convert_units(
    times: &[f64],
    raw: &[[f64; 2]],
    full: FullScale,
    caps: &Capacities,
) -> Result<TimeSeries> {
    if !(full.nadh_max > 0.0 && full.atp_max > 0.0) {
        return Err(Error::InvalidSeries("full-scale values must be positive"));
    }
    caps.validate()?;
    if raw.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidSeries(
            "raw values must be finite and non-negative",
        ));
    }
    let mut clamped = 0usize;
    let y = raw
        .iter()
        .map(|r| {
            if r[0] > full.nadh_max || r[1] > full.atp_max {
                clamped += 1;
            }
            [
                r[0].min(full.nadh_max) / full.nadh_max * caps.m_ch as f64,
                r[1].min(full.atp_max) / full.atp_max * caps.n_axp as f64,
            ]
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} samples above full scale were clamped");
    }
    TimeSeries::from_samples(
        times,
        y,
        full.nadh_max / caps.m_ch as f64,
        full.atp_max / caps.n_axp as f64,
    )
}

/// `Z`: the `(m_CH, n_ATP)` levels of each transient state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    rows: Vec<[f64; 2]>,
}

impl ObservationMap {
    pub fn new(space: &IsolatedSpace) -> Self {
        let rows = (0..space.len())
            .map(|i| {
                let (m, n) = space.levels(i);
                [m as f64, n as f64]
            })
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    /// Column `c` of `Z`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    /// `vᵀ Z`.
    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (p, r) in v.iter().zip(&self.rows) {
            out[0] += p * r[0];
            out[1] += p * r[1];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_maps_to_capacity() {
        let caps = Capacities::isolated(20, 20).unwrap();
        let s = convert_units(
            &[0.0, 1.0, 2.0],
            &[[12.985, 3.6], [0.0, 0.0], [6.4925, 1.8]],
            FullScale::default(),
            &caps,
        )
        .unwrap();
        assert_eq!(s.observations()[0], [20.0, 20.0]);
        assert_eq!(s.observations()[1], [0.0, 0.0]);
        assert!((s.observations()[2][0] - 10.0).abs() < 1e-12);
        assert!((s.alpha_atp - 0.18).abs() < 1e-15);
        assert!((s.alpha_nadh - 0.64925).abs() < 1e-15);
    }

    #[test]
    fn over_full_scale_is_clamped() {
        let caps = Capacities::isolated(20, 20).unwrap();
        let s = convert_units(&[0.0], &[[20.0, 9.0]], FullScale::default(), &caps).unwrap();
        assert_eq!(s.observations()[0], [20.0, 20.0]);
    }

    #[test]
    fn spacing_rules() {
        assert_eq!(uniform_spacing(&[0.0, 10.0, 20.0]).unwrap(), Some(10.0));
        assert!(uniform_spacing(&[0.0, 10.0, 20.0, 31.0]).is_err());
        assert!(uniform_spacing(&[1.0, 2.0]).is_err());
        assert!(uniform_spacing(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn truncation_keeps_the_boundary_sample() {
        let s = TimeSeries::new(10.0, alloc::vec![[0.0, 0.0]; 200], 1.0, 1.0).unwrap();
        assert_eq!(s.truncated(1300.0).len(), 131);
    }
}
