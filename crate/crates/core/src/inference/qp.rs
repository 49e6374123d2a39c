//! Convex quadratic programs `min ½xᵀHx + qᵀx  s.t.  Ex = b, x ≥ 0` by a
//! primal-dual interior-point method with Mehrotra's predictor-corrector.
//!
//! The Newton system is reduced to `K = H + X⁻¹S` (Cholesky) plus a small
//! dense Schur complement on the equality rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix, Lu};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    /// Target for the scaled primal and dual residuals.
    pub tolerance: f64,
    /// Target for the duality gap `xᵀs`.
    pub gap_tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-11,
            gap_tolerance: 1e-15,
        }
    }
}

/// First-order optimality residuals at a returned point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `‖Hx + q − Eᵀy − s‖∞`
    pub stationarity: f64,
    /// `‖Ex − b‖∞`
    pub primal: f64,
    /// `max_i x_i s_i`
    pub complementarity: f64,
    /// `min(min_i x_i, min_i s_i)`; non-negative at a valid certificate.
    pub sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max((-self.sign).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    /// Multipliers of the bounds.
    pub s: Vec<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½xᵀHx + qᵀx`.
pub fn objective(h: &DenseMatrix, q: &[f64], x: &[f64]) -> f64 {
    let hx = h.mul_vec(x).unwrap_or_default();
    0.5 * dot(x, &hx) + dot(q, x)
}

pub fn kkt_residuals(
    h: &DenseMatrix,
    q: &[f64],
    e: &DenseMatrix,
    b: &[f64],
    x: &[f64],
    y: &[f64],
    s: &[f64],
) -> KktResiduals {
    let hx = h.mul_vec(x).unwrap_or_default();
    let ety = e.left_mul_vec(y).unwrap_or_default();
    let ex = e.mul_vec(x).unwrap_or_default();
    let mut stationarity = 0.0f64;
    for i in 0..x.len() {
        stationarity = stationarity.max((hx[i] + q[i] - ety[i] - s[i]).abs());
    }
    let primal = ex
        .iter()
        .zip(b)
        .fold(0.0f64, |a, (l, r)| a.max((l - r).abs()));
    let complementarity = x.iter().zip(s).fold(0.0f64, |a, (x, s)| a.max(x * s));
    let sign = x.iter().chain(s).fold(f64::INFINITY, |a, v| a.min(*v));
    KktResiduals {
        stationarity,
        primal,
        complementarity,
        sign,
    }
}

/// Cholesky of `k`, adding a growing diagonal shift if it is only
/// semidefinite.
fn factor(mut k: DenseMatrix) -> Result<Cholesky> {
    let n = k.rows();
    let scale = (0..n).fold(1.0f64, |a, i| a.max(k[(i, i)].abs()));
    let mut shift = 0.0;
    for _ in 0..8 {
        if let Ok(c) = Cholesky::new(&k) {
            return Ok(c);
        }
        let next = if shift == 0.0 {
            1e-14 * scale
        } else {
            shift * 100.0
        };
        for i in 0..n {
            k.row_mut(i)[i] += next - shift;
        }
        shift = next;
    }
    Err(Error::QpFailed("Newton matrix is not positive definite"))
}

/// Largest `α ≤ 1` keeping `v + α dv ≥ 0`, damped by `eta`.
fn step_to_boundary(v: &[f64], dv: &[f64], eta: f64) -> f64 {
    let mut alpha = 1.0f64;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-eta * x / d);
        }
    }
    alpha
}

/// Re-solves the equality-constrained QP on supports guessed from the
/// interior point and keeps the best valid certificate. The interior point
/// leaves `O(μ)` mass on inactive coordinates; where strict complementarity
/// fails both `x_i` and `s_i` are small, so several cut-offs on `x_i / s_i`
/// are tried.
fn polish(h: &DenseMatrix, q: &[f64], e: &DenseMatrix, b: &[f64], sol: QpSolution) -> QpSolution {
    let mut best = sol;
    let original = best.kkt.max().max(1e-12);
    for cut in [1.0, 1e2, 1e4, 1e6, 1e8] {
        let free: Vec<usize> = (0..h.rows())
            .filter(|&i| best.x[i] >= cut * best.s[i])
            .collect();
        if let Some(cand) = solve_on_support(h, q, e, b, &free, &best) {
            if cand.kkt.max() <= original
                && cand.objective <= best.objective + 1e-15 * (1.0 + best.objective.abs())
            {
                best = cand;
            }
        }
    }
    best
}

/// Solves a saddle-point system whose leading `n_primal` block is positive
/// semidefinite. The system is often singular (few free coordinates, or a flat
/// objective), so both blocks are shifted and the solution is refined against
/// the exact system starting from `z`.
fn solve_saddle(
    kkt: &DenseMatrix,
    n_primal: usize,
    rhs: &[f64],
    mut z: Vec<f64>,
) -> Option<Vec<f64>> {
    let dim = kkt.rows();
    let reg = 1e-10 * (1.0 + kkt.max_abs());
    let shifted = DenseMatrix::from_fn(dim, dim, |r, c| {
        kkt[(r, c)]
            + if r != c {
                0.0
            } else if r < n_primal {
                reg
            } else {
                -reg
            }
    });
    let lu = Lu::new(&shifted, 1e-300).ok()?;
    for _ in 0..20 {
        let kz = kkt.mul_vec(&z).ok()?;
        let res: Vec<f64> = rhs.iter().zip(&kz).map(|(r, k)| r - k).collect();
        if inf_norm(&res) < 1e-15 * (1.0 + inf_norm(rhs)) {
            break;
        }
        let dz = lu.solve(&res).ok()?;
        for (a, d) in z.iter_mut().zip(&dz) {
            *a += d;
        }
    }
    Some(z)
}

fn solve_on_support(
    h: &DenseMatrix,
    q: &[f64],
    e: &DenseMatrix,
    b: &[f64],
    free: &[usize],
    start: &QpSolution,
) -> Option<QpSolution> {
    let n = h.rows();
    let m = e.rows();
    let f = free.len();
    if f == 0 {
        return None;
    }
    let kkt = DenseMatrix::from_fn(f + m, f + m, |r, c| match (r < f, c < f) {
        (true, true) => h[(free[r], free[c])],
        (true, false) => -e[(c - f, free[r])],
        (false, true) => e[(r - f, free[c])],
        (false, false) => 0.0,
    });
    let rhs: Vec<f64> = free
        .iter()
        .map(|&i| -q[i])
        .chain(b.iter().copied())
        .collect();
    let z0: Vec<f64> = free
        .iter()
        .map(|&i| start.x[i])
        .chain(start.y.iter().copied())
        .collect();
    let z = solve_saddle(&kkt, f, &rhs, z0)?;
    let mut x = vec![0.0; n];
    for (k, &i) in free.iter().enumerate() {
        if z[k] < -1e-9 {
            return None;
        }
        x[i] = z[k].max(0.0);
    }
    // Multipliers: minimum-norm least squares of E_Fᵀ y = (Hx + q)_F.
    let hx = h.mul_vec(&x).ok()?;
    let grad: Vec<f64> = (0..n).map(|i| hx[i] + q[i]).collect();
    let mut normal = DenseMatrix::from_fn(m, m, |a, c| {
        free.iter().map(|&i| e[(a, i)] * e[(c, i)]).sum()
    });
    let ridge = 1e-14 * (1.0 + (0..m).map(|a| normal[(a, a)]).sum::<f64>());
    for a in 0..m {
        normal.row_mut(a)[a] += ridge;
    }
    let rhs_y: Vec<f64> = (0..m)
        .map(|a| free.iter().map(|&i| e[(a, i)] * grad[i]).sum())
        .collect();
    let y = Lu::new(&normal, 1e-300)
        .and_then(|lu| lu.solve(&rhs_y))
        .ok()?;
    let ety = e.left_mul_vec(&y).ok()?;
    let mut s = vec![0.0; n];
    for i in 0..n {
        if x[i] == 0.0 {
            let v = grad[i] - ety[i];
            if v < -1e-10 {
                return None;
            }
            s[i] = v.max(0.0);
        }
    }
    let kkt = kkt_residuals(h, q, e, b, &x, &y, &s);
    Some(QpSolution {
        objective: objective(h, q, &x),
        x,
        y,
        s,
        kkt,
        iterations: start.iterations,
    })
}

pub fn solve_qp(
    h: &DenseMatrix,
    q: &[f64],
    e: &DenseMatrix,
    b: &[f64],
    opts: QpOptions,
) -> Result<QpSolution> {
    let n = h.rows();
    let m = e.rows();
    if !h.is_square() || q.len() != n || e.cols() != n || b.len() != m {
        return Err(Error::Dimension("QP data shapes disagree"));
    }
    let tol = opts.tolerance;
    let b_scale = 1.0 + inf_norm(b);
    let q_scale = 1.0 + inf_norm(q);

    let mut x = vec![1.0; n];
    let mut s = vec![1.0; n];
    let mut y = vec![0.0; m];

    // Last iterate meeting the residual targets with a small average
    // complementarity; returned if the gap target cannot be reached.
    let mut fallback: Option<QpSolution> = None;
    for it in 0..opts.max_iterations {
        let hx = h.mul_vec(&x)?;
        let ety = e.left_mul_vec(&y)?;
        let r_d: Vec<f64> = (0..n).map(|i| hx[i] + q[i] - ety[i] - s[i]).collect();
        let ex = e.mul_vec(&x)?;
        let r_p: Vec<f64> = ex.iter().zip(b).map(|(l, r)| l - r).collect();
        let mu = dot(&x, &s) / n as f64;

        if inf_norm(&r_p) <= tol * b_scale
            && inf_norm(&r_d) <= tol * q_scale
            && mu * n as f64 <= opts.gap_tolerance
        {
            let kkt = kkt_residuals(h, q, e, b, &x, &y, &s);
            let sol = QpSolution {
                objective: objective(h, q, &x),
                x,
                y,
                s,
                kkt,
                iterations: it,
            };
            return Ok(polish(h, q, e, b, sol));
        }
        if inf_norm(&r_p) <= tol * b_scale && inf_norm(&r_d) <= tol * q_scale && mu <= tol {
            let kkt = kkt_residuals(h, q, e, b, &x, &y, &s);
            fallback = Some(QpSolution {
                objective: objective(h, q, &x),
                x: x.clone(),
                y: y.clone(),
                s: s.clone(),
                kkt,
                iterations: it,
            });
        }
        let step = ipm_step(h, e, &mut x, &mut y, &mut s, &r_d, &r_p, mu);
        match (step, fallback.take()) {
            (Ok(()), f) => fallback = f,
            (Err(_), Some(sol)) => return Ok(polish(h, q, e, b, sol)),
            (Err(err), None) => return Err(err),
        }
    }
    match fallback {
        Some(sol) => Ok(polish(h, q, e, b, sol)),
        None => Err(Error::QpFailed("iteration budget exhausted")),
    }
}

/// One Mehrotra predictor-corrector step.
#[allow(clippy::too_many_arguments)]
fn ipm_step(
    h: &DenseMatrix,
    e: &DenseMatrix,
    x: &mut [f64],
    y: &mut [f64],
    s: &mut [f64],
    r_d: &[f64],
    r_p: &[f64],
    mu: f64,
) -> Result<()> {
    let n = x.len();
    let m = y.len();

    let mut k = h.clone();
    for i in 0..n {
        k.row_mut(i)[i] += s[i] / x[i];
    }
    let chol = factor(k)?;
    // W = K⁻¹ Eᵀ, column by column; Schur complement E W.
    let mut w = Vec::with_capacity(m);
    for r in 0..m {
        w.push(chol.solve(e.row(r))?);
    }
    let schur = DenseMatrix::from_fn(m, m, |a, c| dot(e.row(a), &w[c]));
    let schur = Lu::new(&schur, 1e-300)?;

    let solve = |r_c: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let rhs: Vec<f64> = (0..n).map(|i| -r_d[i] - r_c[i] / x[i]).collect();
        let k_rhs = chol.solve(&rhs)?;
        let e_k_rhs = e.mul_vec(&k_rhs)?;
        let dy_rhs: Vec<f64> = (0..m).map(|r| -r_p[r] - e_k_rhs[r]).collect();
        let dy = schur.solve(&dy_rhs)?;
        let mut dx = k_rhs;
        for (r, wr) in w.iter().enumerate() {
            for i in 0..n {
                dx[i] += wr[i] * dy[r];
            }
        }
        let ds: Vec<f64> = (0..n).map(|i| (-r_c[i] - s[i] * dx[i]) / x[i]).collect();
        Ok((dx, dy, ds))
    };

    let r_aff: Vec<f64> = (0..n).map(|i| x[i] * s[i]).collect();
    let (dxa, _, dsa) = solve(&r_aff)?;
    let alpha_aff = step_to_boundary(&x, &dxa, 1.0).min(step_to_boundary(&s, &dsa, 1.0));
    let mu_aff = (0..n)
        .map(|i| (x[i] + alpha_aff * dxa[i]) * (s[i] + alpha_aff * dsa[i]))
        .sum::<f64>()
        / n as f64;
    let sigma = libm::pow(mu_aff / mu, 3.0).min(1.0);

    let r_c: Vec<f64> = (0..n)
        .map(|i| x[i] * s[i] + dxa[i] * dsa[i] - sigma * mu)
        .collect();
    let (dx, dy, ds) = solve(&r_c)?;
    let alpha = step_to_boundary(&x, &dx, 0.995).min(step_to_boundary(&s, &ds, 0.995));
    for i in 0..n {
        x[i] += alpha * dx[i];
        s[i] += alpha * ds[i];
    }
    for r in 0..m {
        y[r] += alpha * dy[r];
    }
    if x.iter().chain(s.iter()).any(|v| !v.is_finite()) {
        return Err(Error::QpFailed("iterate diverged"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        // min ½‖x − c‖² on the simplex.
        let h = DenseMatrix::identity(3);
        let q = vec![-0.9, -0.4, 0.5];
        let e = DenseMatrix::from_row_major(1, 3, vec![1.0; 3]).unwrap();
        let sol = solve_qp(&h, &q, &e, &[1.0], QpOptions::default()).unwrap();
        // Projection of (0.9, 0.4, −0.5) onto the simplex is (0.75, 0.25, 0).
        assert!((sol.x[0] - 0.75).abs() < 1e-9);
        assert!((sol.x[1] - 0.25).abs() < 1e-9);
        assert!(sol.x[2].abs() < 1e-9);
        assert!(sol.kkt.max() < 1e-9);
    }

    #[test]
    fn linear_program_vertex() {
        // H = 0: min x0 + 2x1 + 3x2 on the simplex picks x0.
        let h = DenseMatrix::zeros(3, 3);
        let e = DenseMatrix::from_row_major(1, 3, vec![1.0; 3]).unwrap();
        let sol = solve_qp(&h, &[1.0, 2.0, 3.0], &e, &[1.0], QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }
}
