//! Alternating minimization: a QP over `π0` for the current `x`, then one
//! descent step on `x` with Armijo backtracking.

use alloc::vec::Vec;

use super::objective::{GradientMethod, Pi0Fit, Problem};
use crate::error::{Error, Result};
use crate::kinetics::ParamVector;
use crate::linalg::Lu;

/// How the step on `x` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScaling {
    /// `x ← (x − μ ∇f)⁺`, with the step size carried between iterations.
    Identity,
    /// Two-metric projection `x ← (x − μ D ∇f)⁺`: `D` is the inverse
    /// Gauss–Newton matrix `JᵀJ` on the free parameters and its diagonal on
    /// parameters held at zero by a positive gradient. Trial steps start at
    /// `μ = 1`.
    GaussNewton,
    /// Gauss–Newton on `(x, π0)` together: the linearized cost is minimized
    /// over `x ≥ 0` and feasible `π0` by a QP, and both move along the
    /// segment towards that minimizer. When `π0` is poorly determined by the
    /// data, the cost is nearly flat along many `π0` directions and steps on
    /// `x` alone converge slowly; this variant does not. Falls back to
    /// [`StepScaling::GaussNewton`] when the joint step is not a descent
    /// direction.
    #[default]
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_outer: usize,
    /// Stop once an outer iteration improves the NLL by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Stop once the NLL falls below this.
    pub abs_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// First trial step for [`StepScaling::Identity`]; chosen from the
    /// gradient when `None`.
    pub initial_step: Option<f64>,
    pub scaling: StepScaling,
    pub gradient: GradientMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer: 500,
            rel_tol: 1e-10,
            abs_tol: 1e-24,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            initial_step: None,
            scaling: StepScaling::Joint,
            gradient: GradientMethod::Tangent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    /// Relative or absolute tolerance met.
    Converged,
    /// No step along the projected direction decreased the NLL.
    Stationary,
    /// Outer budget exhausted; the best iterate is returned.
    MaxIterations,
    /// The series holds only the initial sample, so `x` is not identifiable;
    /// the initial guess is returned.
    Unidentifiable,
}

impl FitStatus {
    pub fn name(&self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::Stationary => "stationary",
            FitStatus::MaxIterations => "max_iterations",
            FitStatus::Unidentifiable => "unidentifiable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub nll: f64,
    pub x: ParamVector,
    /// Accepted step size (0 for the initial point).
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub x_hat: ParamVector,
    pub pi0_hat: Vec<f64>,
    pub nll: f64,
    pub trace: Vec<TraceEntry>,
    pub status: FitStatus,
    /// `π0ᵀ B_k Z` at the sample times, model units.
    pub predicted: Vec<[f64; 2]>,
}

/// Descent direction `D g`.
fn direction(x: &[f64; 4], g: &[f64; 4], jac: &[[[f64; 2]; 4]], scaling: StepScaling) -> [f64; 4] {
    match scaling {
        StepScaling::Identity => *g,
        StepScaling::GaussNewton | StepScaling::Joint => {
            let mut jtj = [[0.0; 4]; 4];
            for jk in jac {
                for a in 0..4 {
                    for b in 0..4 {
                        jtj[a][b] += jk[a][0] * jk[b][0] + jk[a][1] * jk[b][1];
                    }
                }
            }
            // Diagonal step, used for held parameters and to size the
            // ε-active set.
            let diag: [f64; 4] = core::array::from_fn(|j| {
                if jtj[j][j] > 0.0 {
                    g[j] / jtj[j][j]
                } else {
                    g[j]
                }
            });
            let scale = x.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-12);
            let width: f64 = (0..4)
                .map(|j| (x[j] - (x[j] - diag[j]).max(0.0)).abs())
                .sum();
            let eps = width.min(1e-2 * scale);
            let held: [bool; 4] =
                core::array::from_fn(|j| (x[j] <= eps && g[j] > 0.0) || jtj[j][j] == 0.0);
            let free: Vec<usize> = (0..4).filter(|&j| !held[j]).collect();
            let mut d = diag;
            if !free.is_empty() {
                let ridge = 1e-12 * free.iter().fold(0.0f64, |a, &j| a.max(jtj[j][j]));
                let m = crate::linalg::DenseMatrix::from_fn(free.len(), free.len(), |a, b| {
                    jtj[free[a]][free[b]] + if a == b { ridge } else { 0.0 }
                });
                let rhs: Vec<f64> = free.iter().map(|&j| g[j]).collect();
                match Lu::new(&m, 1e-300).and_then(|lu| lu.solve(&rhs)) {
                    Ok(sol) => {
                        for (k, &j) in free.iter().enumerate() {
                            d[j] = sol[k];
                        }
                    }
                    Err(_) => {
                        for &j in &free {
                            d[j] = g[j] / jtj[j][j].max(f64::MIN_POSITIVE);
                        }
                    }
                }
            }
            d
        }
    }
}

struct Point<'a> {
    x: ParamVector,
    pi0: &'a [f64],
    f: f64,
    g: [f64; 4],
}

struct Accepted {
    x: ParamVector,
    pi0: Vec<f64>,
    f: f64,
    step: f64,
    backtracks: usize,
}

/// `∂f/∂π0 = −Σ_k B_k Z r_k`, including the `k = 0` term with `B_0 = I`.
fn pi0_gradient(problem: &Problem, columns: &[[Vec<f64>; 2]], residuals: &[[f64; 2]]) -> Vec<f64> {
    let z = problem.observation_map().rows();
    let mut out: Vec<f64> = z
        .iter()
        .map(|row| -(row[0] * residuals[0][0] + row[1] * residuals[0][1]))
        .collect();
    for (cols, r) in columns.iter().zip(&residuals[1..]) {
        for c in 0..2 {
            for (o, v) in out.iter_mut().zip(&cols[c]) {
                *o -= v * r[c];
            }
        }
    }
    out
}

/// Backtracking along the segment from `(x, π0)` to the joint Gauss–Newton
/// point. Every point of the segment is feasible.
fn joint_search(
    problem: &Problem,
    here: &Point<'_>,
    g_pi: &[f64],
    x_gn: &ParamVector,
    pi_gn: &[f64],
    opts: &FitOptions,
) -> Result<Option<Accepted>> {
    let (xa, xg) = (here.x.as_array(), x_gn.as_array());
    let dx: [f64; 4] = core::array::from_fn(|j| xg[j] - xa[j]);
    let dpi: Vec<f64> = pi_gn.iter().zip(here.pi0).map(|(a, b)| a - b).collect();
    let slope: f64 = (0..4).map(|j| here.g[j] * dx[j]).sum::<f64>()
        + g_pi.iter().zip(&dpi).map(|(a, b)| a * b).sum::<f64>();
    if !(slope < 0.0) {
        return Ok(None);
    }
    let mut t = 1.0;
    for b in 0..opts.max_backtracks {
        let x = ParamVector::project(core::array::from_fn(|j| xa[j] + t * dx[j]));
        let pi0: Vec<f64> = here
            .pi0
            .iter()
            .zip(&dpi)
            .map(|(p, d)| (p + t * d).max(0.0))
            .collect();
        match problem.nll(&x, &pi0) {
            Ok(ft) if ft <= here.f + opts.armijo_c * t * slope => {
                return Ok(Some(Accepted {
                    x,
                    pi0,
                    f: ft,
                    step: t,
                    backtracks: b,
                }));
            }
            Ok(_) | Err(Error::InfeasibleStep { .. }) => t *= opts.backtrack,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Backtracking on `x ← (x − μ D ∇f)⁺` with `π0` held. `step` is the first
/// trial `μ`; 1 when `None`.
fn projected_search(
    problem: &Problem,
    here: &Point<'_>,
    jac: &[[[f64; 2]; 4]],
    step: Option<f64>,
    opts: &FitOptions,
) -> Result<Option<Accepted>> {
    let xa = here.x.as_array();
    let d = direction(&xa, &here.g, jac, opts.scaling);
    let mut mu = step.unwrap_or(1.0);
    for b in 0..opts.max_backtracks {
        let x = ParamVector::project(core::array::from_fn(|j| xa[j] - mu * d[j]));
        let ta = x.as_array();
        if ta == xa {
            break;
        }
        let decrease: f64 = (0..4).map(|j| here.g[j] * (xa[j] - ta[j])).sum();
        match problem.nll(&x, here.pi0) {
            Ok(ft) if ft <= here.f - opts.armijo_c * decrease => {
                return Ok(Some(Accepted {
                    x,
                    pi0: here.pi0.to_vec(),
                    f: ft,
                    step: mu,
                    backtracks: b,
                }));
            }
            Ok(_) | Err(Error::InfeasibleStep { .. }) => mu *= opts.backtrack,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Fits `(x, π0)` from `init_x`.
pub fn fit(problem: &Problem, init_x: &ParamVector, opts: &FitOptions) -> Result<FitResult> {
    init_x.validate()?;
    let mut x = *init_x;
    let (mut current, mut columns): (Pi0Fit, _) = problem.fit_pi0_with_columns(&x)?;
    let mut trace = Vec::new();
    trace.push(TraceEntry {
        iteration: 0,
        nll: current.nll,
        x,
        step: 0.0,
        backtracks: 0,
    });

    let finish = |x: ParamVector,
                  pi0: Vec<f64>,
                  nll: f64,
                  trace: Vec<TraceEntry>,
                  status: FitStatus|
     -> Result<FitResult> {
        let predicted = problem.means(&x, &pi0)?;
        Ok(FitResult {
            x_hat: x,
            pi0_hat: pi0,
            nll,
            trace,
            status,
            predicted,
        })
    };

    if problem.series().len() < 2 {
        return finish(
            x,
            current.pi0,
            current.nll,
            trace,
            FitStatus::Unidentifiable,
        );
    }

    let mut mu = opts.initial_step;
    let mut status = FitStatus::MaxIterations;
    for it in 1..=opts.max_outer {
        if current.nll <= opts.abs_tol {
            status = FitStatus::Converged;
            break;
        }
        let (residuals, jac) = problem.residual_jacobian(&x, &current.pi0, opts.gradient)?;
        let mut f = 0.0;
        let mut g = [0.0; 4];
        for (r, j) in residuals.iter().zip(&jac) {
            f += 0.5 * (r[0] * r[0] + r[1] * r[1]);
            for p in 0..4 {
                g[p] -= r[0] * j[p][0] + r[1] * j[p][1];
            }
        }
        let here = Point {
            x,
            pi0: &current.pi0,
            f,
            g,
        };

        let mut accepted = None;
        if opts.scaling == StepScaling::Joint {
            // A failed joint QP is not fatal: the two-metric step below is
            // always available.
            if let Ok((x_gn, pi_gn)) = problem.joint_step(&x, &columns, &jac) {
                let g_pi = pi0_gradient(problem, &columns, &residuals);
                accepted = joint_search(problem, &here, &g_pi, &x_gn, &pi_gn, opts)?;
            }
        }
        if accepted.is_none() {
            let step = match opts.scaling {
                StepScaling::Identity => Some(*mu.get_or_insert_with(|| {
                    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let xmax = x.as_array().iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-3);
                    if gmax > 0.0 {
                        0.1 * xmax / gmax
                    } else {
                        1.0
                    }
                })),
                _ => None,
            };
            accepted = projected_search(problem, &here, &jac, step, opts)?;
        }
        let Some(Accepted {
            x: trial,
            pi0: pi_trial,
            f: f_trial,
            step,
            backtracks,
        }) = accepted
        else {
            status = FitStatus::Stationary;
            break;
        };
        if opts.scaling == StepScaling::Identity {
            mu = Some(step / opts.backtrack);
        }

        let (refit, trial_columns) = problem.fit_pi0_with_columns(&trial)?;
        columns = trial_columns;
        let (pi0, f_new) = if refit.nll <= f_trial {
            (refit.pi0, refit.nll)
        } else {
            (pi_trial, f_trial)
        };
        x = trial;
        current = Pi0Fit {
            pi0,
            nll: f_new,
            ..refit
        };
        trace.push(TraceEntry {
            iteration: it,
            nll: f_new,
            x,
            step,
            backtracks,
        });
        if f - f_new <= opts.rel_tol * f {
            status = FitStatus::Converged;
            break;
        }
    }
    finish(x, current.pi0, current.nll, trace, status)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::TimeSeries;
    use crate::kinetics::ExternalProfile;
    use crate::state::Capacities;
    use alloc::vec;

    fn setup(x: &ParamVector, k: usize) -> (Problem, Vec<f64>) {
        let caps = Capacities::isolated(4, 4).unwrap();
        let profile =
            ExternalProfile::pulse_with_linear_decay(8.0, 200.0, 300.0, 30.0, 8.0).unwrap();
        let mut pi0 = vec![0.0; 25];
        pi0[1 * 5 + 2] = 1.0;
        let dummy = TimeSeries::new(4.0, vec![[0.0, 0.0]; k], 1.0, 1.0).unwrap();
        let y = Problem::isolated(dummy, &profile, caps, 0.5)
            .unwrap()
            .means(x, &pi0)
            .unwrap();
        let series = TimeSeries::new(4.0, y, 1.0, 1.0).unwrap();
        (Problem::isolated(series, &profile, caps, 0.5).unwrap(), pi0)
    }

    #[test]
    fn single_sample_is_flagged() {
        let x = ParamVector::new(0.0, 0.01, 0.02, 0.003).unwrap();
        let (p, _) = setup(&x, 1);
        let r = fit(&p, &x, &FitOptions::default()).unwrap();
        assert_eq!(r.status, FitStatus::Unidentifiable);
        assert_eq!(r.x_hat, x);
    }

    #[test]
    fn recovers_small_instance() {
        let truth = ParamVector::new(0.0, 0.01, 0.02, 0.003).unwrap();
        let (p, _) = setup(&truth, 60);
        let start = ParamVector::new(0.0, 0.02, 0.01, 0.006).unwrap();
        let r = fit(&p, &start, &FitOptions::default()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].nll <= w[0].nll);
        }
        assert!(r.nll < 1e-10, "{r:?}");
        let (a, b) = (r.x_hat.as_array(), truth.as_array());
        for j in 1..4 {
            assert!((a[j] - b[j]).abs() < 0.01 * b[j], "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn identity_metric_descends() {
        let truth = ParamVector::new(0.0, 0.01, 0.02, 0.003).unwrap();
        let (p, _) = setup(&truth, 30);
        let start = ParamVector::new(0.001, 0.02, 0.01, 0.006).unwrap();
        let opts = FitOptions {
            scaling: StepScaling::Identity,
            max_outer: 40,
            ..FitOptions::default()
        };
        let r = fit(&p, &start, &opts).unwrap();
        assert!(r.nll < r.trace[0].nll);
        assert!(r.x_hat.gamma >= 0.0);
        for w in r.trace.windows(2) {
            assert!(w[1].nll <= w[0].nll);
        }
    }
}
