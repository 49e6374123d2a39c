use alloc::vec;
use alloc::vec::Vec;

use super::qp::{solve_qp, KktResiduals, QpOptions, QpSolution};
use super::{ObservationMap, TimeSeries};
use crate::error::{Error, Result};
use crate::kinetics::{ExternalProfile, ExternalState, Mode, ParamVector, RateModel};
use crate::linalg::{DenseMatrix, NeumaierSum};
use crate::state::{Capacities, IsolatedSpace};
use crate::system::{linearize_isolated, LinearizedSystem, MarkovSystem};
use crate::transient::{check_step, step_matrix, steps_for};

/// How the parameter gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    /// Forward propagation of `π0ᵀ ∂B_k/∂x_j` alongside `π0ᵀ B_k`, one sparse
    /// step at a time.
    #[default]
    Tangent,
    /// Dense step powers and their derivatives by repeated squaring,
    /// `d(P²) = dP·P + P·dP`. Cubic in the state count; meant for small
    /// systems and as a cross-check.
    Doubling,
}

/// Fitted initial distribution with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Pi0Fit {
    pub pi0: Vec<f64>,
    pub nll: f64,
    /// Residuals of the normalized QP (objective divided by its largest
    /// coefficient).
    pub kkt: KktResiduals,
    pub iterations: usize,
}

/// A series, a profile and a step size, with everything that does not depend
/// on `(x, π0)` precomputed.
#[derive(Debug, Clone)]
pub struct Problem {
    space: IsolatedSpace,
    model: RateModel,
    z: ObservationMap,
    series: TimeSeries,
    profile: ExternalProfile,
    delta: f64,
    steps_per_sample: u64,
    linear: Vec<LinearizedSystem>,
    bases: Vec<[MarkovSystem; 4]>,
    /// For each sample interval `k−1 → k`, the `(distinct system, steps)`
    /// runs in time order.
    schedule: Vec<Vec<(usize, u64)>>,
}

/// `ratio` as a power of two of at least 2.
fn power_of_two(ratio: f64) -> Result<u64> {
    let r = libm::round(ratio);
    if !(ratio.is_finite()
        && r >= 2.0
        && (ratio - r).abs() <= 1e-9 * r
        && (r as u64).is_power_of_two())
    {
        return Err(Error::NotPowerOfTwo { ratio });
    }
    Ok(r as u64)
}

impl Problem {
    /// Isolated cell with no death, as in the fitting setting.
    pub fn isolated(
        series: TimeSeries,
        profile: &ExternalProfile,
        caps: Capacities,
        delta: f64,
    ) -> Result<Self> {
        let model = RateModel::isolated(ParamVector::default(), caps)?;
        Self::new(series, profile, &model, delta)
    }

    /// `model` supplies capacities and death rate; its parameters are ignored.
    pub fn new(
        series: TimeSeries,
        profile: &ExternalProfile,
        model: &RateModel,
        delta: f64,
    ) -> Result<Self> {
        if !matches!(model.mode, Mode::Isolated) {
            return Err(Error::InvalidArgument(
                "inference is defined for the isolated cell",
            ));
        }
        let caps = model.caps;
        let y0 = series.observations()[0];
        if !(y0[0] <= caps.m_ch as f64 && y0[1] <= caps.n_axp as f64) {
            return Err(Error::InfeasibleObservation {
                nadh: y0[0],
                atp: y0[1],
            });
        }
        series.check_capacities(&caps)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument("step must be positive"));
        }
        let steps_per_sample = power_of_two(series.spacing() / delta)?;
        if series.last_time() > profile.end() {
            return Err(Error::BeyondProfile {
                t: series.last_time(),
                end: profile.end(),
            });
        }
        let space = IsolatedSpace::new(caps)?;

        let mut exts: Vec<ExternalState> = Vec::new();
        let mut which = Vec::new();
        let mut linear = Vec::new();
        let mut bases = Vec::new();
        for seg in profile.segments() {
            let k = match exts.iter().position(|e| *e == seg.ext) {
                Some(k) => k,
                None => {
                    let lin = linearize_isolated(&space, model, &seg.ext)?;
                    bases.push([lin.basis(0)?, lin.basis(1)?, lin.basis(2)?, lin.basis(3)?]);
                    linear.push(lin);
                    exts.push(seg.ext);
                    exts.len() - 1
                }
            };
            which.push(k);
        }

        let segs = profile.segments();
        let ranges: Vec<(u64, u64)> = segs
            .iter()
            .enumerate()
            .map(|(m, s)| {
                (
                    steps_for(s.start, delta),
                    if m + 1 == segs.len() {
                        u64::MAX
                    } else {
                        steps_for(s.end, delta)
                    },
                )
            })
            .collect();
        let schedule = (1..series.len() as u64)
            .map(|k| {
                let (from, to) = ((k - 1) * steps_per_sample, k * steps_per_sample);
                ranges
                    .iter()
                    .enumerate()
                    .filter_map(|(m, &(a, b))| {
                        let (lo, hi) = (a.max(from), b.min(to));
                        (lo < hi).then(|| (which[m], hi - lo))
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            z: ObservationMap::new(&space),
            space,
            model: model.clone(),
            series,
            profile: profile.clone(),
            delta,
            steps_per_sample,
            linear,
            bases,
            schedule,
        })
    }

    pub fn space(&self) -> &IsolatedSpace {
        &self.space
    }

    pub fn series(&self) -> &TimeSeries {
        &self.series
    }

    pub fn profile(&self) -> &ExternalProfile {
        &self.profile
    }

    pub fn observation_map(&self) -> &ObservationMap {
        &self.z
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps_per_sample(&self) -> u64 {
        self.steps_per_sample
    }

    /// Model at parameters `x`.
    pub fn model_at(&self, x: &ParamVector) -> RateModel {
        self.model.with_params(*x)
    }

    /// Distinct systems at `x`, each checked against the step size.
    pub fn systems(&self, x: &ParamVector) -> Result<Vec<MarkovSystem>> {
        x.validate()?;
        self.linear
            .iter()
            .map(|lin| {
                let sys = lin.assemble(x)?;
                check_step(&sys, self.delta)?;
                Ok(sys)
            })
            .collect()
    }

    fn check_pi0(&self, pi0: &[f64]) -> Result<()> {
        if pi0.len() != self.space.len() {
            return Err(Error::Dimension(
                "initial distribution length must match the state space",
            ));
        }
        if pi0.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidDistribution("entries must be finite"));
        }
        Ok(())
    }

    /// `π0ᵀ B_k Z` for every sample.
    pub fn means(&self, x: &ParamVector, pi0: &[f64]) -> Result<Vec<[f64; 2]>> {
        self.check_pi0(pi0)?;
        let systems = self.systems(x)?;
        let mut v = pi0.to_vec();
        let mut scratch = Vec::with_capacity(v.len());
        let mut out = Vec::with_capacity(self.series.len());
        out.push(self.z.project(&v));
        for runs in &self.schedule {
            for &(m, count) in runs {
                for _ in 0..count {
                    systems[m].step_row(&v, self.delta, &mut scratch);
                    core::mem::swap(&mut v, &mut scratch);
                }
            }
            out.push(self.z.project(&v));
        }
        Ok(out)
    }

    fn cost(&self, means: &[[f64; 2]]) -> f64 {
        let mut sum = NeumaierSum::default();
        for (y, m) in self.series.observations().iter().zip(means) {
            let (a, b) = (y[0] - m[0], y[1] - m[1]);
            sum.add(0.5 * (a * a + b * b));
        }
        sum.value()
    }

    /// `½ Σ_k ‖y_k − π0ᵀ B_k Z‖²`.
    pub fn nll(&self, x: &ParamVector, pi0: &[f64]) -> Result<f64> {
        Ok(self.cost(&self.means(x, pi0)?))
    }

    /// Residuals `y_k − π0ᵀ B_k Z` and their sensitivities
    /// `J_k[j] = π0ᵀ (∂B_k/∂x_j) Z`.
    pub fn residual_jacobian(
        &self,
        x: &ParamVector,
        pi0: &[f64],
        method: GradientMethod,
    ) -> Result<(Vec<[f64; 2]>, Vec<[[f64; 2]; 4]>)> {
        self.check_pi0(pi0)?;
        let systems = self.systems(x)?;
        let (means, jac) = match method {
            GradientMethod::Tangent => self.tangent(&systems, pi0),
            GradientMethod::Doubling => self.doubling(&systems, pi0)?,
        };
        let residuals = self
            .series
            .observations()
            .iter()
            .zip(&means)
            .map(|(y, m)| [y[0] - m[0], y[1] - m[1]])
            .collect();
        Ok((residuals, jac))
    }

    /// NLL and its gradient in `x`.
    pub fn gradient(
        &self,
        x: &ParamVector,
        pi0: &[f64],
        method: GradientMethod,
    ) -> Result<(f64, [f64; 4])> {
        let (residuals, jac) = self.residual_jacobian(x, pi0, method)?;
        let mut nll = NeumaierSum::default();
        let mut grad = [
            NeumaierSum::default(),
            NeumaierSum::default(),
            NeumaierSum::default(),
            NeumaierSum::default(),
        ];
        for (r, j) in residuals.iter().zip(&jac) {
            nll.add(0.5 * (r[0] * r[0] + r[1] * r[1]));
            for p in 0..4 {
                grad[p].add(-(r[0] * j[p][0] + r[1] * j[p][1]));
            }
        }
        Ok((
            nll.value(),
            [
                grad[0].value(),
                grad[1].value(),
                grad[2].value(),
                grad[3].value(),
            ],
        ))
    }

    fn tangent(
        &self,
        systems: &[MarkovSystem],
        pi0: &[f64],
    ) -> (Vec<[f64; 2]>, Vec<[[f64; 2]; 4]>) {
        let n = pi0.len();
        let mut v = pi0.to_vec();
        let mut u: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; n]);
        let mut scratch = Vec::with_capacity(n);
        let mut flow = Vec::with_capacity(n);
        let mut means = vec![self.z.project(&v)];
        let mut jac = vec![[[0.0; 2]; 4]];
        for runs in &self.schedule {
            for &(m, count) in runs {
                let sys = &systems[m];
                for _ in 0..count {
                    for j in 0..4 {
                        sys.step_row(&u[j], self.delta, &mut scratch);
                        core::mem::swap(&mut u[j], &mut scratch);
                        self.bases[m][j].apply_flow_row(&v, &mut flow);
                        for (a, b) in u[j].iter_mut().zip(&flow) {
                            *a += self.delta * b;
                        }
                    }
                    sys.step_row(&v, self.delta, &mut scratch);
                    core::mem::swap(&mut v, &mut scratch);
                }
            }
            means.push(self.z.project(&v));
            jac.push(core::array::from_fn(|j| self.z.project(&u[j])));
        }
        (means, jac)
    }

    fn doubling(
        &self,
        systems: &[MarkovSystem],
        pi0: &[f64],
    ) -> Result<(Vec<[f64; 2]>, Vec<[[f64; 2]; 4]>)> {
        let n = pi0.len();
        let steps: Vec<DenseMatrix> = systems
            .iter()
            .map(|s| step_matrix(s, self.delta))
            .collect::<Result<_>>()?;
        let dsteps: Vec<[DenseMatrix; 4]> = self
            .bases
            .iter()
            .map(|b| {
                core::array::from_fn(|j| {
                    let mut a = b[j].flow_matrix();
                    a.scale(self.delta);
                    a
                })
            })
            .collect();

        let mut cache: Vec<((usize, u64), DenseMatrix, [DenseMatrix; 4])> = Vec::new();
        let mut v = pi0.to_vec();
        let mut u: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; n]);
        let mut means = vec![self.z.project(&v)];
        let mut jac = vec![[[0.0; 2]; 4]];
        for runs in &self.schedule {
            for &(m, count) in runs {
                let idx = match cache.iter().position(|(key, _, _)| *key == (m, count)) {
                    Some(i) => i,
                    None => {
                        let (p, dp) = pow_with_derivatives(&steps[m], &dsteps[m], count)?;
                        cache.push(((m, count), p, dp));
                        cache.len() - 1
                    }
                };
                let (_, p, dp) = &cache[idx];
                let mut next_u: [Vec<f64>; 4] = core::array::from_fn(|_| Vec::new());
                for j in 0..4 {
                    let mut a = p.left_mul_vec(&u[j])?;
                    let b = dp[j].left_mul_vec(&v)?;
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    next_u[j] = a;
                }
                u = next_u;
                v = p.left_mul_vec(&v)?;
            }
            means.push(self.z.project(&v));
            jac.push(core::array::from_fn(|j| self.z.project(&u[j])));
        }
        Ok((means, jac))
    }

    /// `B_k Z` for `k = 1..K`, by backward column propagation.
    fn observation_columns(&self, systems: &[MarkovSystem]) -> Vec<[Vec<f64>; 2]> {
        let cols = [self.z.column(0), self.z.column(1)];
        let mut scratch = Vec::with_capacity(self.space.len());
        (1..=self.schedule.len())
            .map(|k| {
                core::array::from_fn(|c| {
                    let mut w = cols[c].clone();
                    for runs in self.schedule[..k].iter().rev() {
                        for &(m, count) in runs.iter().rev() {
                            for _ in 0..count {
                                systems[m].step_col(&w, self.delta, &mut scratch);
                                core::mem::swap(&mut w, &mut scratch);
                            }
                        }
                    }
                    w
                })
            })
            .collect()
    }

    /// Global minimizer over `π0 ≥ 0` with `π0ᵀ[Z, 1] = [y_0, 1]`.
    pub fn fit_pi0(&self, x: &ParamVector) -> Result<Pi0Fit> {
        self.fit_pi0_with_columns(x).map(|(fit, _)| fit)
    }

    /// [`Self::fit_pi0`] together with the columns `B_k Z`, `k = 1..K`.
    pub(crate) fn fit_pi0_with_columns(
        &self,
        x: &ParamVector,
    ) -> Result<(Pi0Fit, Vec<[Vec<f64>; 2]>)> {
        let systems = self.systems(x)?;
        let n = self.space.len();
        let obs = self.series.observations();
        let g = self.observation_columns(&systems);

        let mut h = DenseMatrix::zeros(n, n);
        let mut q = vec![0.0; n];
        for (k, cols) in g.iter().enumerate() {
            for c in 0..2 {
                accumulate(&mut h, &mut q, &cols[c], obs[k + 1][c]);
            }
        }
        let e = self.constraint_rows(n);
        let b = [obs[0][0], obs[0][1], 1.0];
        let sol = solve_normalized(h, q, &e, &b)?;
        let pi0: Vec<f64> = sol.x.iter().map(|v| v.max(0.0)).collect();
        let nll = self.cost(&self.means_with(&systems, &pi0));
        Ok((
            Pi0Fit {
                pi0,
                nll,
                kkt: sol.kkt,
                iterations: sol.iterations,
            },
            g,
        ))
    }

    /// Gauss–Newton step on `(x, π0)` jointly. The means are linearized at
    /// `(x, π0)` as `π0'ᵀ B_k Z + J_kᵀ (x' − x)` and the least-squares cost of
    /// that model is minimized over `x' ≥ 0` and feasible `π0'` by one QP.
    /// `columns` are the `B_k Z` at `x` and `jac` the mean sensitivities at
    /// `(x, π0)`, both as returned by [`Self::fit_pi0_with_columns`] and
    /// [`Self::residual_jacobian`].
    pub(crate) fn joint_step(
        &self,
        x: &ParamVector,
        columns: &[[Vec<f64>; 2]],
        jac: &[[[f64; 2]; 4]],
    ) -> Result<(ParamVector, Vec<f64>)> {
        let n = self.space.len();
        let obs = self.series.observations();
        let xa = x.as_array();
        // Parameters enter the QP as multiples of `scale` so that all
        // variables are of order one.
        let top = xa.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-12);
        let scale: [f64; 4] = core::array::from_fn(|j| xa[j].max(1e-2 * top));
        let mut h = DenseMatrix::zeros(n + 4, n + 4);
        let mut q = vec![0.0; n + 4];
        let mut w = vec![0.0; n + 4];
        for (k, cols) in columns.iter().enumerate() {
            let jk = &jac[k + 1];
            for c in 0..2 {
                w[..n].copy_from_slice(&cols[c]);
                let mut target = obs[k + 1][c];
                for j in 0..4 {
                    w[n + j] = jk[j][c] * scale[j];
                    target += jk[j][c] * xa[j];
                }
                accumulate(&mut h, &mut q, &w, target);
            }
        }
        let e = self.constraint_rows(n + 4);
        let b = [obs[0][0], obs[0][1], 1.0];
        let sol = solve_normalized(h, q, &e, &b)?.x;
        let pi0 = sol[..n].iter().map(|v| v.max(0.0)).collect();
        let x_new = ParamVector::project(core::array::from_fn(|j| sol[n + j] * scale[j]));
        Ok((x_new, pi0))
    }

    /// `[Z, 1]ᵀ` padded with zero columns up to `width`.
    fn constraint_rows(&self, width: usize) -> DenseMatrix {
        let mut e = DenseMatrix::zeros(3, width);
        for (i, r) in self.z.rows().iter().enumerate() {
            e.row_mut(0)[i] = r[0];
            e.row_mut(1)[i] = r[1];
            e.row_mut(2)[i] = 1.0;
        }
        e
    }

    fn means_with(&self, systems: &[MarkovSystem], pi0: &[f64]) -> Vec<[f64; 2]> {
        let mut v = pi0.to_vec();
        let mut scratch = Vec::with_capacity(v.len());
        let mut out = vec![self.z.project(&v)];
        for runs in &self.schedule {
            for &(m, count) in runs {
                for _ in 0..count {
                    systems[m].step_row(&v, self.delta, &mut scratch);
                    core::mem::swap(&mut v, &mut scratch);
                }
            }
            out.push(self.z.project(&v));
        }
        out
    }
}

/// Adds the least-squares term `½ (wᵀv − target)²` to `½ vᵀHv + qᵀv`.
fn accumulate(h: &mut DenseMatrix, q: &mut [f64], w: &[f64], target: f64) {
    for (i, &wi) in w.iter().enumerate() {
        q[i] -= wi * target;
        if wi == 0.0 {
            continue;
        }
        for (hij, wj) in h.row_mut(i).iter_mut().zip(w) {
            *hij += wi * wj;
        }
    }
}

/// Solves the QP after dividing the objective by its largest coefficient.
fn solve_normalized(
    mut h: DenseMatrix,
    mut q: Vec<f64>,
    e: &DenseMatrix,
    b: &[f64],
) -> Result<QpSolution> {
    let scale = h
        .max_abs()
        .max(q.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .max(1.0);
    h.scale(1.0 / scale);
    for v in &mut q {
        *v /= scale;
    }
    solve_qp(&h, &q, e, b, QpOptions::default())
}

/// `P^e` and `d(P^e)/dx_j` by binary powering with the product rule.
fn pow_with_derivatives(
    p: &DenseMatrix,
    dp: &[DenseMatrix; 4],
    mut e: u64,
) -> Result<(DenseMatrix, [DenseMatrix; 4])> {
    let n = p.rows();
    let mut result = DenseMatrix::identity(n);
    let mut dresult: [DenseMatrix; 4] = core::array::from_fn(|_| DenseMatrix::zeros(n, n));
    let mut base = p.clone();
    let mut dbase = dp.clone();
    while e > 0 {
        if e & 1 == 1 {
            for j in 0..4 {
                let mut d = dresult[j].matmul(&base)?;
                d.add_scaled(1.0, &result.matmul(&dbase[j])?)?;
                dresult[j] = d;
            }
            result = result.matmul(&base)?;
        }
        e >>= 1;
        if e > 0 {
            for j in 0..4 {
                let mut d = dbase[j].matmul(&base)?;
                d.add_scaled(1.0, &base.matmul(&dbase[j])?)?;
                dbase[j] = d;
            }
            base = base.matmul(&base)?;
        }
    }
    Ok((result, dresult))
}

/// NLL of `(x, π0)` for an isolated cell without death.
pub fn nll(
    x: &ParamVector,
    pi0: &[f64],
    series: &TimeSeries,
    profile: &ExternalProfile,
    caps: Capacities,
    delta: f64,
) -> Result<f64> {
    Problem::isolated(series.clone(), profile, caps, delta)?.nll(x, pi0)
}

/// Gradient of [`nll`] in `x`.
pub fn nll_gradient(
    x: &ParamVector,
    pi0: &[f64],
    series: &TimeSeries,
    profile: &ExternalProfile,
    caps: Capacities,
    delta: f64,
    method: GradientMethod,
) -> Result<[f64; 4]> {
    Ok(Problem::isolated(series.clone(), profile, caps, delta)?
        .gradient(x, pi0, method)?
        .1)
}

/// Optimal `π0` for fixed `x`.
pub fn fit_pi0(
    x: &ParamVector,
    series: &TimeSeries,
    profile: &ExternalProfile,
    caps: Capacities,
    delta: f64,
) -> Result<Pi0Fit> {
    Problem::isolated(series.clone(), profile, caps, delta)?.fit_pi0(x)
}
