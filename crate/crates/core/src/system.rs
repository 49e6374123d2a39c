//! Jump-chain, rate and flow matrices of the transient states.
//!
//! A [`MarkovSystem`] keeps the outgoing transitions of every transient state
//! in sparse form; the dense `T`, `R` and `A = R(T − I)` are produced on
//! demand. Transitions to DEAD are kept as a separate per-state death rate, so
//! row `i` of `T` sums to `1 − d_i / R_i`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kinetics::{
    apply_cable_event, apply_isolated_event, cable_rates, isolated_terms, ExternalState,
    ParamVector, RateModel, RateTerm,
};
use crate::linalg::DenseMatrix;
use crate::state::{CableSpace, IsolatedSpace, StateIndex};

/// Sparse CTMC on the transient states, with an implicit absorbing DEAD.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSystem {
    /// `(target, rate)` per state, targets distinct and never the source.
    transitions: Vec<Vec<(usize, f64)>>,
    death: Vec<f64>,
    total: Vec<f64>,
}

impl MarkovSystem {
    /// Builds a system from per-state `(target, rate)` lists and death rates.
    /// Duplicate targets are merged; self-loops and non-positive rates are
    /// dropped.
    pub fn from_transitions(rows: Vec<Vec<(usize, f64)>>, death: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if death.len() != n {
            return Err(Error::Dimension("one death rate per state required"));
        }
        let mut transitions = Vec::with_capacity(n);
        let mut total = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, r) in row {
                if j >= n {
                    return Err(Error::StateOutOfRange(j));
                }
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::InvalidParams(
                        "transition rates must be finite and non-negative",
                    ));
                }
                if j == i || r == 0.0 {
                    continue;
                }
                match merged.iter_mut().find(|(t, _)| *t == j) {
                    Some(e) => e.1 += r,
                    None => merged.push((j, r)),
                }
            }
            merged.sort_by_key(|&(j, _)| j);
            let d = death[i];
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidParams(
                    "death rates must be finite and non-negative",
                ));
            }
            total.push(merged.iter().map(|&(_, r)| r).sum::<f64>() + d);
            transitions.push(merged);
        }
        Ok(Self {
            transitions,
            death,
            total,
        })
    }

    /// Builds a system from a dense flow matrix: off-diagonals are rates, and
    /// the death rate of row `i` is `−Σ_j A(i, j)` (clamped at zero).
    pub fn from_flow_matrix(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("flow matrix must be square"));
        }
        let n = a.rows();
        let mut rows = Vec::with_capacity(n);
        let mut death = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i && a[(i, j)] != 0.0)
                .map(|j| (j, a[(i, j)]))
                .collect();
            let out: f64 = row.iter().map(|&(_, r)| r).sum();
            death.push((-a[(i, i)] - out).max(0.0));
            rows.push(row);
        }
        Self::from_transitions(rows, death)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Outgoing transient transitions of state `i`.
    #[inline]
    pub fn transitions(&self, i: usize) -> &[(usize, f64)] {
        &self.transitions[i]
    }

    /// Rate from `i` into DEAD.
    #[inline]
    pub fn death_rate(&self, i: usize) -> f64 {
        self.death[i]
    }

    pub fn death_rates(&self) -> &[f64] {
        &self.death
    }

    /// Total outflow `R_i`.
    #[inline]
    pub fn total_rate(&self, i: usize) -> f64 {
        self.total[i]
    }

    pub fn total_rates(&self) -> &[f64] {
        &self.total
    }

    pub fn max_rate(&self) -> f64 {
        self.total.iter().fold(0.0_f64, |a, &b| a.max(b))
    }

    pub fn has_death(&self) -> bool {
        self.death.iter().any(|&d| d > 0.0)
    }

    /// Dense flow matrix `A`: `A(s, j) = λ_{s,j}`, `A(j, j) = −R_j`.
    pub fn flow_matrix(&self) -> DenseMatrix {
        let n = self.len();
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for &(j, r) in &self.transitions[i] {
                a[(i, j)] = r;
            }
            a[(i, i)] = -self.total[i];
        }
        a
    }

    /// Dense jump-chain matrix `T(i, j) = λ_{i,j} / R_i`; rows with `R_i = 0`
    /// are zero.
    pub fn jump_matrix(&self) -> DenseMatrix {
        let n = self.len();
        let mut t = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let r = self.total[i];
            if r > 0.0 {
                for &(j, l) in &self.transitions[i] {
                    t[(i, j)] = l / r;
                }
            }
        }
        t
    }

    /// Diagonal of the rate matrix `R`.
    pub fn rate_vector(&self) -> Vec<f64> {
        self.total.clone()
    }

    /// Probability that the jump out of `i` goes to DEAD, `1 − Σ_j T(i, j)`;
    /// zero for states that never jump.
    pub fn death_probability(&self, i: usize) -> f64 {
        let r = self.total[i];
        if r > 0.0 {
            self.death[i] / r
        } else {
            0.0
        }
    }

    /// `v ← vᵀ (I + Δ A)` using the sparse rows.
    pub fn step_row(&self, v: &[f64], delta: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            v.iter()
                .zip(&self.total)
                .map(|(&p, &r)| p * (1.0 - delta * r)),
        );
        for (i, &p) in v.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(j, r) in &self.transitions[i] {
                out[j] += p * delta * r;
            }
        }
    }

    /// `w ← (I + Δ A) w` using the sparse rows.
    pub fn step_col(&self, w: &[f64], delta: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.transitions
                .iter()
                .zip(&self.total)
                .enumerate()
                .map(|(i, (row, &r))| {
                    let mut acc = w[i] * (1.0 - delta * r);
                    for &(j, l) in row {
                        acc += delta * l * w[j];
                    }
                    acc
                }),
        );
    }

    /// `vᵀ A` using the sparse rows.
    pub fn apply_flow_row(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(v.iter().zip(&self.total).map(|(&p, &r)| -p * r));
        for (i, &p) in v.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(j, r) in &self.transitions[i] {
                out[j] += p * r;
            }
        }
    }
}

/// Target of an affine transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    State(usize),
    Dead,
}

/// Flow structure with every rate kept affine in the parameter vector, so
/// `A(x) = A_const + Σ_j x_j A_j` can be assembled or differentiated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    rows: Vec<Vec<(Target, RateTerm)>>,
}

impl LinearizedSystem {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn terms(&self, i: usize) -> &[(Target, RateTerm)] {
        &self.rows[i]
    }

    /// Concrete system at parameters `x`.
    pub fn assemble(&self, x: &ParamVector) -> Result<MarkovSystem> {
        self.assemble_with(|t| t.eval(x))
    }

    /// Derivative `∂A/∂x_j` expressed as a system whose rates are the
    /// coefficients of `x_j`; its flow matrix is exactly `A_j`.
    pub fn basis(&self, j: usize) -> Result<MarkovSystem> {
        if j >= ParamVector::LEN {
            return Err(Error::InvalidArgument("parameter index out of range"));
        }
        self.assemble_with(|t| t.coeffs[j])
    }

    fn assemble_with(&self, rate: impl Fn(&RateTerm) -> f64) -> Result<MarkovSystem> {
        let mut rows = Vec::with_capacity(self.rows.len());
        let mut death = vec![0.0; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (target, term) in row {
                let r = rate(term);
                match target {
                    Target::State(j) => out.push((*j, r)),
                    Target::Dead => death[i] += r,
                }
            }
            rows.push(out);
        }
        MarkovSystem::from_transitions(rows, death)
    }
}

/// Affine flow structure of an isolated cell under a constant external state.
pub fn linearize_isolated(
    space: &IsolatedSpace,
    model: &RateModel,
    ext: &ExternalState,
) -> Result<LinearizedSystem> {
    ext.validate()?;
    let rows = (0..space.len())
        .map(|i| {
            let (m, n) = space.levels(i);
            isolated_terms(m, n, ext, model)
                .into_iter()
                .map(|(kind, term)| {
                    let target = match apply_isolated_event(m, n, kind) {
                        Some((m2, n2)) => Target::State(
                            space
                                .index_of(m2, n2)
                                .expect("kinetics only enables in-range transitions"),
                        ),
                        None => Target::Dead,
                    };
                    (target, term)
                })
                .collect()
        })
        .collect();
    Ok(LinearizedSystem { rows })
}

/// Affine flow structure of a cable; any cell death absorbs the joint chain.
pub fn linearize_cable(
    space: &CableSpace,
    model: &RateModel,
    ext_per_cell: &[ExternalState],
) -> Result<LinearizedSystem> {
    let n = space.dense_len()?;
    if ext_per_cell.len() != space.n_cells() {
        return Err(Error::Dimension("one external state per cell required"));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let state = space.state(i as u128)?;
        let mut row = Vec::new();
        for e in cable_rates(&state, ext_per_cell, model)? {
            let target = if e.kind == crate::kinetics::EventKind::Death {
                Target::Dead
            } else {
                let mut next = state.clone();
                apply_cable_event(&mut next, e.kind, e.cell);
                let j = space.index(&next).ok_or(Error::IndexOverflow)?;
                Target::State(j as usize)
            };
            row.push((target, e.term));
        }
        rows.push(row);
    }
    Ok(LinearizedSystem { rows })
}

/// Affine flow structure for `index`, with one external state for all cells.
pub fn linearize(
    index: &StateIndex,
    model: &RateModel,
    ext: &ExternalState,
) -> Result<LinearizedSystem> {
    match index {
        StateIndex::Isolated(space) => linearize_isolated(space, model, ext),
        StateIndex::Cable(space) => linearize_cable(space, model, &vec![*ext; space.n_cells()]),
    }
}

/// Markov system of `index` under a constant external state.
pub fn build_system(
    index: &StateIndex,
    model: &RateModel,
    ext: &ExternalState,
) -> Result<MarkovSystem> {
    linearize(index, model, ext)?.assemble(&model.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{DeathRate, ExternalState};
    use crate::state::{build_isolated_space, Capacities};

    fn fitted_model(m: u32, n: u32) -> RateModel {
        RateModel::isolated(
            ParamVector::new(0.0, 2.31e-3, 4.866e-3, 0.850e-3).unwrap(),
            Capacities::isolated(m, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn two_exit_split() {
        // One transient state with two exits to absorbing sinks, rates 1 and 3.
        let sys = MarkovSystem::from_transitions(vec![vec![]], vec![4.0]).unwrap();
        assert_eq!(sys.total_rate(0), 4.0);
        let sinks = [1.0, 3.0];
        let split: Vec<f64> = sinks.iter().map(|r| r / sys.total_rate(0)).collect();
        assert_eq!(split, vec![0.25, 0.75]);
        assert_eq!(sys.death_probability(0), 1.0);
    }

    #[test]
    fn rows_of_t_sum_to_one_without_death() {
        let model = fitted_model(2, 2);
        let index = build_isolated_space(model.caps).unwrap();
        let sys = build_system(&index, &model, &ExternalState::donor(30.0).unwrap()).unwrap();
        let t = sys.jump_matrix();
        for (i, s) in t.row_sums().iter().enumerate() {
            if sys.total_rate(i) > 0.0 {
                assert!((s - 1.0).abs() < 1e-15, "row {i} sums to {s}");
            }
        }
        let a = sys.flow_matrix();
        for s in a.row_sums() {
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn flow_equals_r_times_t_minus_i() {
        let model = fitted_model(3, 2)
            .with_death(DeathRate::Constant(0.01))
            .unwrap();
        let index = build_isolated_space(model.caps).unwrap();
        let sys = build_system(&index, &model, &ExternalState::donor(30.0).unwrap()).unwrap();
        let n = sys.len();
        let mut t_minus_i = sys.jump_matrix();
        for i in 0..n {
            t_minus_i[(i, i)] -= 1.0;
        }
        let r = DenseMatrix::from_fn(n, n, |i, j| if i == j { sys.total_rate(i) } else { 0.0 });
        let rt = r.matmul(&t_minus_i).unwrap();
        assert!(rt.max_abs_diff(&sys.flow_matrix()) < 1e-15);
        for (i, s) in sys.flow_matrix().row_sums().iter().enumerate() {
            assert!((s + sys.death_rate(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn flow_matrix_round_trip() {
        let model = fitted_model(2, 3)
            .with_death(DeathRate::Constant(0.2))
            .unwrap();
        let index = build_isolated_space(model.caps).unwrap();
        let sys = build_system(&index, &model, &ExternalState::donor(10.0).unwrap()).unwrap();
        let back = MarkovSystem::from_flow_matrix(&sys.flow_matrix()).unwrap();
        assert!(back.flow_matrix().max_abs_diff(&sys.flow_matrix()) < 1e-15);
    }

    #[test]
    fn basis_recombines_to_flow() {
        let model = fitted_model(3, 3)
            .with_death(DeathRate::Constant(0.05))
            .unwrap();
        let index = build_isolated_space(model.caps).unwrap();
        let ext = ExternalState::donor(7.0).unwrap();
        let lin = linearize(&index, &model, &ext).unwrap();
        let x = ParamVector::new(0.3, 0.2, 0.7, 0.1).unwrap();
        let mut a = lin
            .assemble(&ParamVector::from_array([0.0; 4]))
            .unwrap()
            .flow_matrix();
        for (j, v) in x.as_array().iter().enumerate() {
            a.add_scaled(*v, &lin.basis(j).unwrap().flow_matrix())
                .unwrap();
        }
        assert!(a.max_abs_diff(&lin.assemble(&x).unwrap().flow_matrix()) < 1e-15);
    }

    #[test]
    fn sparse_steps_match_dense() {
        let model = fitted_model(3, 2)
            .with_death(DeathRate::Constant(0.01))
            .unwrap();
        let index = build_isolated_space(model.caps).unwrap();
        let sys = build_system(&index, &model, &ExternalState::donor(30.0).unwrap()).unwrap();
        let n = sys.len();
        let delta = 0.5;
        let mut p = DenseMatrix::identity(n);
        p.add_scaled(delta, &sys.flow_matrix()).unwrap();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) / 10.0).collect();
        let mut out = Vec::new();
        sys.step_row(&v, delta, &mut out);
        let dense = p.left_mul_vec(&v).unwrap();
        assert!(out.iter().zip(&dense).all(|(a, b)| (a - b).abs() < 1e-14));
        sys.step_col(&v, delta, &mut out);
        let dense = p.mul_vec(&v).unwrap();
        assert!(out.iter().zip(&dense).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
