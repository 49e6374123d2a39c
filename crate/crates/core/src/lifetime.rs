//! Lifetime of an isolated cell: the absorption time in DEAD.
//!
//! The mean has the closed form `E[L] = π0ᵀ (I − T)⁻¹ R⁻¹ 1`, computed by
//! solving `(I − T)ᵀ y = π0` on the states reachable from the support of `π0`.
//! The density is the phase-type form `f_L(t) = π0ᵀ exp(At) d` with `d_i` the
//! death rate of state `i`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Lu, NeumaierSum};
use crate::system::MarkovSystem;
use crate::transient::{check_step, steps_for, uniformized_action};

/// Number of points in the default pdf grid.
pub const DEFAULT_GRID_POINTS: usize = 10_000;

/// Default grid spans `[0, DEFAULT_GRID_SPAN · E[L]]`.
pub const DEFAULT_GRID_SPAN: f64 = 10.0;

/// Expected lifetime; `Infinite` when some state reachable from the initial
/// support cannot reach DEAD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lifetime {
    Finite(f64),
    Infinite,
}

impl Lifetime {
    pub fn is_finite(&self) -> bool {
        matches!(self, Lifetime::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            Lifetime::Finite(v) => *v,
            Lifetime::Infinite => f64::INFINITY,
        }
    }
}

/// Mean lifetime plus the sampled density.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeResult {
    pub expected: Lifetime,
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    /// Trapezoid integral of the pdf over the grid.
    pub death_mass: f64,
}

fn check_distribution(sys: &MarkovSystem, pi0: &[f64]) -> Result<()> {
    if pi0.len() != sys.len() {
        return Err(Error::Dimension(
            "initial distribution length must match the state space",
        ));
    }
    if pi0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidDistribution(
            "entries must be finite and non-negative",
        ));
    }
    let s: f64 = pi0.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution("entries must sum to one"));
    }
    Ok(())
}

/// States reachable from the support of `pi0`.
fn forward_reachable(sys: &MarkovSystem, pi0: &[f64]) -> Vec<bool> {
    let mut seen = vec![false; sys.len()];
    let mut stack: Vec<usize> = pi0
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, _)| i)
        .collect();
    for &i in &stack {
        seen[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &(j, _) in sys.transitions(i) {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// States from which DEAD is reachable.
fn reaches_death(sys: &MarkovSystem) -> Vec<bool> {
    let n = sys.len();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for &(j, _) in sys.transitions(i) {
            incoming[j].push(i);
        }
    }
    let mut ok: Vec<bool> = (0..n).map(|i| sys.death_rate(i) > 0.0).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| ok[i]).collect();
    while let Some(j) = stack.pop() {
        for &i in &incoming[j] {
            if !ok[i] {
                ok[i] = true;
                stack.push(i);
            }
        }
    }
    ok
}

/// `E[L] = π0ᵀ (I − T)⁻¹ R⁻¹ 1`.
pub fn expected_lifetime(sys: &MarkovSystem, pi0: &[f64]) -> Result<Lifetime> {
    check_distribution(sys, pi0)?;
    let reach = forward_reachable(sys, pi0);
    let dies = reaches_death(sys);
    if reach.iter().zip(&dies).any(|(r, d)| *r && !*d) {
        return Ok(Lifetime::Infinite);
    }
    let states: Vec<usize> = (0..sys.len()).filter(|&i| reach[i]).collect();
    let mut local = vec![usize::MAX; sys.len()];
    for (k, &i) in states.iter().enumerate() {
        local[i] = k;
    }
    let n = states.len();
    let mut m = DenseMatrix::identity(n);
    for (k, &i) in states.iter().enumerate() {
        let r = sys.total_rate(i);
        let row = m.row_mut(k);
        for &(j, l) in sys.transitions(i) {
            row[local[j]] -= l / r;
        }
    }
    let b: Vec<f64> = states.iter().map(|&i| pi0[i]).collect();
    let y = Lu::new(&m, 1e-14)?.solve_transpose(&b)?;
    let mut sum = NeumaierSum::default();
    for (k, &i) in states.iter().enumerate() {
        sum.add(y[k] / sys.total_rate(i));
    }
    Ok(Lifetime::Finite(sum.value()))
}

/// `f_L(t) = π0ᵀ P_t d` on an increasing grid. With `delta = Some(Δ)` the
/// transient uses `(I + ΔA)^⌈t/Δ⌉`; with `None` it uses uniformization,
/// accurate to the Poisson tail tolerance.
pub fn lifetime_pdf(
    sys: &MarkovSystem,
    pi0: &[f64],
    grid: &[f64],
    delta: Option<f64>,
) -> Result<Vec<f64>> {
    check_distribution(sys, pi0)?;
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "grid must be finite, non-negative and increasing",
        ));
    }
    let d = sys.death_rates();
    let dot = |v: &[f64]| v.iter().zip(d).map(|(p, r)| p * r).sum::<f64>().max(0.0);
    if !sys.has_death() {
        return Ok(vec![0.0; grid.len()]);
    }
    let mut out = Vec::with_capacity(grid.len());
    match delta {
        Some(delta) => {
            check_step(sys, delta)?;
            let mut v = pi0.to_vec();
            let mut scratch = Vec::with_capacity(v.len());
            let mut at = 0u64;
            for &t in grid {
                let target = steps_for(t, delta);
                while at < target {
                    sys.step_row(&v, delta, &mut scratch);
                    core::mem::swap(&mut v, &mut scratch);
                    at += 1;
                }
                out.push(dot(&v));
            }
        }
        None => {
            let mut v = pi0.to_vec();
            let mut at = 0.0;
            for &t in grid {
                v = uniformized_action(sys, &v, t - at)?;
                at = t;
                out.push(dot(&v));
            }
        }
    }
    Ok(out)
}

/// Composite trapezoid rule.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut sum = NeumaierSum::default();
    for k in 1..grid.len().min(values.len()) {
        sum.add(0.5 * (grid[k] - grid[k - 1]) * (values[k] + values[k - 1]));
    }
    sum.value()
}

/// `n` evenly spaced points on `[0, end]`.
pub fn uniform_grid(end: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n).map(|k| end * k as f64 / (n - 1) as f64).collect()
}

/// Mean and density together. Without a grid the default one spans
/// `[0, 10·E[L]]`, which needs a finite lifetime.
pub fn lifetime(
    sys: &MarkovSystem,
    pi0: &[f64],
    grid: Option<&[f64]>,
    delta: Option<f64>,
) -> Result<LifetimeResult> {
    let expected = expected_lifetime(sys, pi0)?;
    let grid = match (grid, expected) {
        (Some(g), _) => g.to_vec(),
        (None, Lifetime::Finite(mean)) => {
            uniform_grid(DEFAULT_GRID_SPAN * mean, DEFAULT_GRID_POINTS)
        }
        (None, Lifetime::Infinite) => {
            return Err(Error::InvalidArgument(
                "lifetime is infinite; a pdf grid must be given",
            ))
        }
    };
    let pdf = lifetime_pdf(sys, pi0, &grid, delta)?;
    let death_mass = trapezoid(&grid, &pdf);
    Ok(LifetimeResult {
        expected,
        grid,
        pdf,
        death_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(delta: f64) -> MarkovSystem {
        MarkovSystem::from_transitions(vec![vec![]], vec![delta]).unwrap()
    }

    fn chain(a: f64, b: f64) -> MarkovSystem {
        MarkovSystem::from_transitions(vec![vec![(1, a)], vec![]], vec![0.0, b]).unwrap()
    }

    #[test]
    fn single_state_mean() {
        assert_eq!(
            expected_lifetime(&single(2.0), &[1.0]).unwrap(),
            Lifetime::Finite(0.5)
        );
    }

    #[test]
    fn two_stage_mean() {
        let e = expected_lifetime(&chain(3.0, 0.5), &[1.0, 0.0])
            .unwrap()
            .value();
        assert_relative_eq!(e, 1.0 / 3.0 + 2.0, max_relative = 1e-14);
    }

    #[test]
    fn no_death_is_infinite() {
        let sys =
            MarkovSystem::from_transitions(vec![vec![(1, 1.0)], vec![(0, 2.0)]], vec![0.0, 0.0])
                .unwrap();
        assert_eq!(
            expected_lifetime(&sys, &[0.5, 0.5]).unwrap(),
            Lifetime::Infinite
        );
        assert_eq!(
            lifetime_pdf(&sys, &[0.5, 0.5], &[0.0, 1.0, 5.0], None).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn unreachable_trap_does_not_matter() {
        // State 2 is a trap, but it is not reachable from state 0.
        let sys = MarkovSystem::from_transitions(
            vec![vec![(1, 1.0)], vec![], vec![]],
            vec![0.0, 1.0, 0.0],
        )
        .unwrap();
        assert_relative_eq!(
            expected_lifetime(&sys, &[1.0, 0.0, 0.0]).unwrap().value(),
            2.0,
            max_relative = 1e-14
        );
        assert_eq!(
            expected_lifetime(&sys, &[0.5, 0.0, 0.5]).unwrap(),
            Lifetime::Infinite
        );
    }

    #[test]
    fn exponential_density() {
        let f = lifetime_pdf(&single(2.0), &[1.0], &[0.0, 1.0], None).unwrap();
        assert_relative_eq!(f[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(f[1], 0.27067056647322535, max_relative = 1e-10);
    }

    #[test]
    fn stepped_density_converges() {
        let exact = 2.0 * libm::exp(-2.0);
        let coarse = lifetime_pdf(&single(2.0), &[1.0], &[1.0], Some(1e-2)).unwrap()[0];
        let fine = lifetime_pdf(&single(2.0), &[1.0], &[1.0], Some(1e-4)).unwrap()[0];
        assert!((fine - exact).abs() < (coarse - exact).abs());
        assert_relative_eq!(fine, exact, max_relative = 1e-3);
    }

    #[test]
    fn matches_two_stage_series() {
        // Convolution of two exponentials: ab/(b−a)(e^{-at} − e^{-bt}).
        let (a, b) = (1.3, 0.4);
        let grid = uniform_grid(20.0, 41);
        let f = lifetime_pdf(&chain(a, b), &[1.0, 0.0], &grid, None).unwrap();
        for (t, v) in grid.iter().zip(&f) {
            let series = a * b / (b - a) * (libm::exp(-a * t) - libm::exp(-b * t));
            assert!((v - series).abs() < 1e-11, "t={t}: {v} vs {series}");
        }
    }

    #[test]
    fn density_integrates_to_mean() {
        let sys = chain(0.7, 1.9);
        let res = lifetime(&sys, &[1.0, 0.0], None, None).unwrap();
        assert!(res.pdf.iter().all(|p| *p >= 0.0));
        assert!((res.death_mass - 1.0).abs() < 1e-3);
        let tf: Vec<f64> = res.grid.iter().zip(&res.pdf).map(|(t, f)| t * f).collect();
        let mean = trapezoid(&res.grid, &tf);
        assert_relative_eq!(mean, res.expected.value(), max_relative = 5e-3);
    }

    #[test]
    fn infinite_needs_grid() {
        let sys = single(0.0);
        assert!(lifetime(&sys, &[1.0], None, None).is_err());
        let res = lifetime(&sys, &[1.0], Some(&[0.0, 1.0]), None).unwrap();
        assert_eq!(res.expected, Lifetime::Infinite);
        assert_eq!(res.death_mass, 0.0);
    }
}
