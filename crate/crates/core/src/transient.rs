//! Transient distributions `P_t`.
//!
//! The working solver is the first-order step `P_Δ = I + ΔA` raised to
//! `n = ⌈t/Δ⌉` by binary powering; the residual factor `exp{A(t − nΔ)}` is
//! dropped. Under a piecewise-constant external profile every step sits on the
//! global grid `[jΔ, (j+1)Δ)`: segment `m` owns steps `n_m..n_{m+1}` with
//! `n_m = ⌈τ_m/Δ⌉`, so cutting a segment in two never changes the step count.
//!
//! [`uniformization_oracle`] evaluates `exp(At)` independently through the
//! Poisson-weighted series of the uniformized chain.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kinetics::{ExternalProfile, ExternalState, RateModel};
use crate::linalg::DenseMatrix;
use crate::state::StateIndex;
use crate::system::{build_system, MarkovSystem};

/// Default fraction of `1 / max_i R_i` used as the step.
pub const DEFAULT_SAFETY: f64 = 0.1;

/// Poisson tail mass at which the uniformization series is truncated.
pub const UNIFORMIZATION_TAIL: f64 = 1e-12;

/// `safety / max_i R_i`, or `safety` when nothing moves.
pub fn default_step(sys: &MarkovSystem, safety: f64) -> f64 {
    let r = sys.max_rate();
    if r > 0.0 {
        safety / r
    } else {
        safety
    }
}

/// Refuses steps that would give `I + ΔA` a negative diagonal entry.
pub fn check_step(sys: &MarkovSystem, delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument("step must be positive and finite"));
    }
    let r = sys.max_rate();
    if delta * r >= 1.0 {
        return Err(Error::InfeasibleStep {
            delta,
            limit: 1.0 / r,
        });
    }
    Ok(())
}

/// `⌈t/Δ⌉`, treating ratios within 1e-9 (relative) of an integer as that
/// integer so that grid-aligned times do not gain a spurious step.
pub fn steps_for(t: f64, delta: f64) -> u64 {
    let r = t / delta;
    let nearest = libm::round(r);
    if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        libm::ceil(r) as u64
    }
}

/// First-order step matrix `I + ΔA`.
pub fn step_matrix(sys: &MarkovSystem, delta: f64) -> Result<DenseMatrix> {
    check_step(sys, delta)?;
    let mut p = DenseMatrix::identity(sys.len());
    p.add_scaled(delta, &sys.flow_matrix())?;
    Ok(p)
}

/// `P_t ≈ (I + ΔA)^⌈t/Δ⌉`.
pub fn transient_at(sys: &MarkovSystem, t: f64, delta: f64) -> Result<DenseMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(
            "time must be finite and non-negative",
        ));
    }
    step_matrix(sys, delta)?.pow(steps_for(t, delta))
}

/// One system per profile segment; segments with equal external states share
/// a build.
#[derive(Debug, Clone)]
pub struct SegmentSystems {
    profile: ExternalProfile,
    systems: Vec<MarkovSystem>,
    which: Vec<usize>,
}

impl SegmentSystems {
    pub fn build(index: &StateIndex, model: &RateModel, profile: &ExternalProfile) -> Result<Self> {
        Self::build_with(profile, |ext| build_system(index, model, ext))
    }

    pub fn build_with(
        profile: &ExternalProfile,
        mut build: impl FnMut(&ExternalState) -> Result<MarkovSystem>,
    ) -> Result<Self> {
        let mut exts: Vec<ExternalState> = Vec::new();
        let mut systems = Vec::new();
        let mut which = Vec::with_capacity(profile.segments().len());
        for seg in profile.segments() {
            let k = match exts.iter().position(|e| *e == seg.ext) {
                Some(k) => k,
                None => {
                    exts.push(seg.ext);
                    systems.push(build(&seg.ext)?);
                    systems.len() - 1
                }
            };
            which.push(k);
        }
        Ok(Self {
            profile: profile.clone(),
            systems,
            which,
        })
    }

    pub fn profile(&self) -> &ExternalProfile {
        &self.profile
    }

    /// System of segment `m`.
    pub fn system(&self, m: usize) -> &MarkovSystem {
        &self.systems[self.which[m]]
    }

    pub fn distinct(&self) -> &[MarkovSystem] {
        &self.systems
    }

    pub fn max_rate(&self) -> f64 {
        self.systems
            .iter()
            .map(MarkovSystem::max_rate)
            .fold(0.0, f64::max)
    }

    pub fn default_step(&self, safety: f64) -> f64 {
        let r = self.max_rate();
        if r > 0.0 {
            safety / r
        } else {
            safety
        }
    }

    /// Runs `(segment, step count)` covering grid steps `from..to`.
    pub fn runs(&self, from: u64, to: u64, delta: f64) -> Vec<(usize, u64)> {
        let segs = self.profile.segments();
        let mut out = Vec::new();
        for (m, seg) in segs.iter().enumerate() {
            let a = steps_for(seg.start, delta).max(from);
            let b = if m + 1 == segs.len() {
                u64::MAX
            } else {
                steps_for(seg.end, delta)
            };
            let b = b.min(to);
            if a < b {
                out.push((m, b - a));
            }
        }
        out
    }

    /// Checks `delta` against every segment that owns at least one step up to
    /// time `t`.
    pub fn check_step_until(&self, t: f64, delta: f64) -> Result<()> {
        if t > self.profile.end() {
            return Err(Error::BeyondProfile {
                t,
                end: self.profile.end(),
            });
        }
        for (m, _) in self.runs(0, steps_for(t, delta), delta) {
            check_step(self.system(m), delta)?;
        }
        Ok(())
    }
}

/// `P_t` under a piecewise-constant profile: the ordered product of
/// per-segment step powers on the global grid.
pub fn transient_piecewise(
    index: &StateIndex,
    model: &RateModel,
    profile: &ExternalProfile,
    t: f64,
    delta: f64,
) -> Result<DenseMatrix> {
    let systems = SegmentSystems::build(index, model, profile)?;
    transient_piecewise_with(&systems, t, delta)
}

/// [`transient_piecewise`] with prebuilt segment systems.
pub fn transient_piecewise_with(
    systems: &SegmentSystems,
    t: f64,
    delta: f64,
) -> Result<DenseMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(
            "time must be finite and non-negative",
        ));
    }
    systems.check_step_until(t, delta)?;
    let n = systems.system(0).len();
    let mut acc: Option<DenseMatrix> = None;
    for (m, count) in systems.runs(0, steps_for(t, delta), delta) {
        let factor = step_matrix(systems.system(m), delta)?.pow(count)?;
        acc = Some(match acc {
            None => factor,
            Some(a) => a.matmul(&factor)?,
        });
    }
    Ok(acc.unwrap_or_else(|| DenseMatrix::identity(n)))
}

/// Row distributions `π0ᵀ P_t` at each of `times` (non-decreasing) under a
/// piecewise profile, propagated one sparse grid step at a time.
pub fn distributions_at(
    systems: &SegmentSystems,
    pi0: &[f64],
    times: &[f64],
    delta: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = systems.system(0).len();
    if pi0.len() != n {
        return Err(Error::Dimension(
            "initial distribution length must match the state space",
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("times must be non-decreasing"));
    }
    if let Some(&last) = times.last() {
        systems.check_step_until(last, delta)?;
    }
    let mut v = pi0.to_vec();
    let mut scratch = Vec::with_capacity(n);
    let mut at_step = 0u64;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument("times must be non-negative"));
        }
        let target = steps_for(t, delta);
        for (m, count) in systems.runs(at_step, target, delta) {
            let sys = systems.system(m);
            for _ in 0..count {
                sys.step_row(&v, delta, &mut scratch);
                core::mem::swap(&mut v, &mut scratch);
            }
        }
        at_step = target.max(at_step);
        out.push(v.clone());
    }
    Ok(out)
}

/// `exp(At)` by uniformization: with `q = max_i R_i` and `U = I + A/q`,
/// `exp(At) = Σ_k Pois(k; qt) U^k`, truncated once the Poisson tail drops
/// below [`UNIFORMIZATION_TAIL`]. Long horizons are split so `qt ≤ 32` per
/// piece and the pieces multiplied back together.
pub fn uniformization_oracle(sys: &MarkovSystem, t: f64) -> Result<DenseMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(
            "time must be finite and non-negative",
        ));
    }
    let n = sys.len();
    let q = sys.max_rate();
    if q == 0.0 || t == 0.0 {
        return Ok(DenseMatrix::identity(n));
    }
    let pieces = libm::ceil(q * t / 32.0).max(1.0) as u64;
    let h = t / pieces as f64;
    let qt = q * h;

    let mut u = DenseMatrix::identity(n);
    u.add_scaled(1.0 / q, &sys.flow_matrix())?;

    let mut weight = libm::exp(-qt);
    let mut cumulative = weight;
    let mut result = DenseMatrix::identity(n);
    result.scale(weight);
    let mut power = DenseMatrix::identity(n);
    let mut k = 0u64;
    loop {
        k += 1;
        weight *= qt / k as f64;
        power = power.matmul(&u)?;
        result.add_scaled(weight, &power)?;
        cumulative += weight;
        let tail_bound = if (k as f64 + 1.0) > qt {
            weight * qt / (k as f64 + 1.0 - qt)
        } else {
            f64::INFINITY
        };
        if (1.0 - cumulative) < UNIFORMIZATION_TAIL
            || tail_bound < UNIFORMIZATION_TAIL * 1e-1
            || k > 10_000
        {
            break;
        }
    }
    result.pow(pieces)
}

/// `vᵀ exp(At)` by uniformization on vectors, with the same truncation rule
/// as [`uniformization_oracle`].
pub fn uniformized_action(sys: &MarkovSystem, v: &[f64], t: f64) -> Result<Vec<f64>> {
    if v.len() != sys.len() {
        return Err(Error::Dimension("vector length must match the state space"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(
            "time must be finite and non-negative",
        ));
    }
    let q = sys.max_rate();
    if q == 0.0 || t == 0.0 {
        return Ok(v.to_vec());
    }
    let pieces = libm::ceil(q * t / 32.0).max(1.0) as u64;
    let qt = q * t / pieces as f64;
    let mut x = v.to_vec();
    let mut power = Vec::with_capacity(v.len());
    let mut scratch = Vec::with_capacity(v.len());
    for _ in 0..pieces {
        let mut weight = libm::exp(-qt);
        let mut cumulative = weight;
        let mut acc: Vec<f64> = x.iter().map(|p| p * weight).collect();
        power.clear();
        power.extend_from_slice(&x);
        let mut k = 0u64;
        while 1.0 - cumulative >= UNIFORMIZATION_TAIL && k < 10_000 {
            k += 1;
            sys.step_row(&power, 1.0 / q, &mut scratch);
            core::mem::swap(&mut power, &mut scratch);
            weight *= qt / k as f64;
            cumulative += weight;
            for (a, p) in acc.iter_mut().zip(&power) {
                *a += weight * p;
            }
        }
        x = acc;
    }
    Ok(x)
}

/// `πᵀ M` for a dense transient matrix.
pub fn propagate(pi0: &[f64], p: &DenseMatrix) -> Result<Vec<f64>> {
    p.left_mul_vec(pi0)
}

/// Point mass on state `i` of an `n`-state space.
pub fn point_mass(n: usize, i: usize) -> Result<Vec<f64>> {
    if i >= n {
        return Err(Error::StateOutOfRange(i));
    }
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_death(rate: f64) -> MarkovSystem {
        MarkovSystem::from_transitions(vec![vec![]], vec![rate]).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let sys = MarkovSystem::from_transitions(vec![vec![], vec![]], vec![0.0, 0.0]).unwrap();
        let p = step_matrix(&sys, 0.3).unwrap();
        assert_eq!(p, DenseMatrix::identity(2));
        assert_eq!(
            uniformization_oracle(&sys, 5.0).unwrap(),
            DenseMatrix::identity(2)
        );
    }

    #[test]
    fn single_state_step() {
        let p = step_matrix(&single_death(2.0), 0.1).unwrap();
        assert!((p[(0, 0)] - 0.8).abs() < 1e-15);
        assert!(matches!(
            step_matrix(&single_death(2.0), 0.5),
            Err(Error::InfeasibleStep { .. })
        ));
        assert!(matches!(
            step_matrix(&single_death(2.0), 0.6),
            Err(Error::InfeasibleStep { .. })
        ));
    }

    #[test]
    fn t_zero_is_identity() {
        let sys = single_death(2.0);
        assert_eq!(
            transient_at(&sys, 0.0, 0.01).unwrap(),
            DenseMatrix::identity(1)
        );
    }

    #[test]
    fn scalar_survival() {
        let sys = single_death(2.0);
        let exact = libm::exp(-2.0);
        let oracle = uniformization_oracle(&sys, 1.0).unwrap();
        assert!((oracle[(0, 0)] - exact).abs() < 1e-12);
        assert!((oracle[(0, 0)] - 0.135335).abs() < 1e-6);
        let approx = transient_at(&sys, 1.0, 1e-5).unwrap();
        assert!((approx[(0, 0)] - exact).abs() < 1e-5);
        // Long horizon goes through the split path.
        let long = uniformization_oracle(&single_death(3.0), 40.0).unwrap();
        assert!((long[(0, 0)] - libm::exp(-120.0)).abs() < 1e-60);
    }

    #[test]
    fn steps_for_snaps_to_grid() {
        assert_eq!(steps_for(1.0, 0.1), 10);
        assert_eq!(steps_for(1.05, 0.1), 11);
        assert_eq!(steps_for(0.0, 0.1), 0);
        assert_eq!(steps_for(20.0, 20.0 / 64.0), 64);
    }
}
