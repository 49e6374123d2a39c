//! The π0 fit against an exhaustive active-set solve and random feasible
//! points, on a 3 × 3 state space.

use cellflux_core::inference::{Problem, TimeSeries};
use cellflux_core::kinetics::{ExternalProfile, ExternalState, ParamVector};
use cellflux_core::state::{Capacities, IsolatedSpace};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Quadratic {
    /// Means of sample k (k ≥ 1) under a point mass on state i: `g[k][i]`.
    g: Vec<Vec<[f64; 2]>>,
    obs: Vec<[f64; 2]>,
    z: Vec<[f64; 2]>,
}

impl Quadratic {
    fn cost(&self, pi: &[f64]) -> f64 {
        let mut c = 0.0;
        for (k, row) in self.g.iter().enumerate() {
            let mut m = [0.0; 2];
            for (p, gi) in pi.iter().zip(row) {
                m[0] += p * gi[0];
                m[1] += p * gi[1];
            }
            let y = self.obs[k + 1];
            c += 0.5 * ((y[0] - m[0]).powi(2) + (y[1] - m[1]).powi(2));
        }
        c
    }

    fn hessian(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.z.len();
        let mut h = DMatrix::zeros(n, n);
        let mut q = DVector::zeros(n);
        for (k, row) in self.g.iter().enumerate() {
            let y = self.obs[k + 1];
            for c in 0..2 {
                for i in 0..n {
                    q[i] -= row[i][c] * y[c];
                    for j in 0..n {
                        h[(i, j)] += row[i][c] * row[j][c];
                    }
                }
            }
        }
        (h, q)
    }

    /// Minimizer of the cost restricted to `support` under the equality
    /// constraints, if the restricted problem is well posed.
    fn solve_on(&self, support: &[usize], h: &DMatrix<f64>, q: &DVector<f64>) -> Option<Vec<f64>> {
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 3, s + 3);
        let mut rhs = DVector::zeros(s + 3);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            rhs[a] = -q[i];
            let e = [self.z[i][0], self.z[i][1], 1.0];
            for r in 0..3 {
                kkt[(s + r, a)] = e[r];
                kkt[(a, s + r)] = e[r];
            }
        }
        rhs[s] = self.obs[0][0];
        rhs[s + 1] = self.obs[0][1];
        rhs[s + 2] = 1.0;
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
        let mut pi = vec![0.0; self.z.len()];
        for (a, &i) in support.iter().enumerate() {
            pi[i] = sol[a];
        }
        let feasible = pi.iter().all(|&p| p >= -1e-12) && self.constraint_residual(&pi) < 1e-9;
        feasible.then_some(pi)
    }

    fn constraint_residual(&self, pi: &[f64]) -> f64 {
        let mut e = [0.0, 0.0, -1.0];
        for (p, z) in pi.iter().zip(&self.z) {
            e[0] += p * z[0];
            e[1] += p * z[1];
            e[2] += p;
        }
        let y = self.obs[0];
        (e[0] - y[0]).abs().max((e[1] - y[1]).abs()).max(e[2].abs())
    }
}

fn setup(seed: u64) -> (Problem, ParamVector, Quadratic) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caps = Capacities::isolated(2, 2).unwrap();
    let space = IsolatedSpace::new(caps).unwrap();
    let mut obs = vec![[1.0, 1.0]];
    for _ in 0..5 {
        obs.push([rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)]);
    }
    let series = TimeSeries::new(1.0, obs.clone(), 1.0, 1.0).unwrap();
    let profile = ExternalProfile::constant(
        ExternalState::new(rng.random_range(0.5..2.0), 1.0).unwrap(),
        10.0,
    )
    .unwrap();
    let x = ParamVector::new(
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
    )
    .unwrap();
    let problem = Problem::isolated(series, &profile, caps, 0.25).unwrap();

    let n = space.len();
    let mut g = vec![vec![[0.0; 2]; n]; obs.len() - 1];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let means = problem.means(&x, &e).unwrap();
        for k in 1..means.len() {
            g[k - 1][i] = means[k];
        }
    }
    let z = (0..n)
        .map(|i| {
            let (m, a) = space.levels(i);
            [m as f64, a as f64]
        })
        .collect();
    (problem, x, Quadratic { g, obs, z })
}

fn supports(n: usize, max_len: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..1 << n)
        .filter(move |m| m.count_ones() as usize <= max_len)
        .map(move |m| (0..n).filter(|i| m & (1 << i) != 0).collect())
}

#[test]
fn matches_exhaustive_active_set() {
    for seed in 0..4 {
        let (problem, x, quad) = setup(seed);
        let fit = problem.fit_pi0(&x).unwrap();
        let (h, q) = quad.hessian();
        let best = supports(9, 9)
            .filter_map(|s| quad.solve_on(&s, &h, &q))
            .map(|pi| quad.cost(&pi))
            .fold(f64::INFINITY, f64::min);
        assert!(best.is_finite());
        assert!(
            (fit.nll - best).abs() <= 1e-9 * (1.0 + best),
            "seed {seed}: ipm {} vs exhaustive {best}",
            fit.nll
        );
        assert!((quad.cost(&fit.pi0) - fit.nll).abs() <= 1e-12 * (1.0 + best));
        assert!(fit.kkt.max() < 1e-8, "seed {seed}: {:?}", fit.kkt);
        assert!(quad.constraint_residual(&fit.pi0) < 1e-9);
        assert!(fit.pi0.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn no_random_feasible_point_does_better() {
    for seed in 0..4 {
        let (problem, x, quad) = setup(seed);
        let fit = problem.fit_pi0(&x).unwrap();
        // With a zero objective the restricted solves on supports of size
        // three or less return the basic feasible solutions.
        let (zero_h, zero_q) = (DMatrix::zeros(9, 9), DVector::zeros(9));
        let vertices: Vec<Vec<f64>> = supports(9, 3)
            .filter_map(|s| quad.solve_on(&s, &zero_h, &zero_q))
            .collect();
        assert!(vertices.len() >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for _ in 0..10_000 {
            let w: Vec<f64> = vertices.iter().map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = w.iter().sum();
            let mut pi = vec![0.0; 9];
            for (wi, v) in w.iter().zip(&vertices) {
                for (p, vi) in pi.iter_mut().zip(v) {
                    *p += wi / total * vi;
                }
            }
            assert!(quad.constraint_residual(&pi) < 1e-9);
            assert!(quad.cost(&pi) >= fit.nll - 1e-10 * (1.0 + fit.nll));
        }
    }
}
