//! Cell state and the finite state spaces of an isolated cell and of a cable.
//!
//! Isolated cells keep only `(m_ch, n_atp)`: the external membrane is parked
//! at LEEM full / HEEM empty. A cable of `n` cells carries `(m_ch, n_atp)` per
//! cell plus `n + 1` membrane pools: pool 0 is the HEEM of cell 0, pool `n` is
//! the LEEM of cell `n - 1`, and pool `i` in between is shared by cell `i - 1`
//! (as its LEEM) and cell `i` (as its HEEM).
//!
//! Both spaces are enumerated row-major with earlier coordinates outermost, so
//! for the isolated cell `index = m_ch * (N_AXP + 1) + n_atp`. DEAD is never
//! indexed.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Joint spaces above this size refuse dense-matrix construction.
pub const DEFAULT_DENSE_BOUND: u128 = 1_000_000;

/// Pool capacities, in units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Capacities {
    /// Internal electron carrier pool (NADH) capacity.
    pub m_ch: u32,
    /// ATP + ADP total.
    pub n_axp: u32,
    /// Low-energy external membrane capacity; also the capacity of every
    /// shared inter-cell pool in a cable.
    pub q_l: u32,
    /// High-energy external membrane capacity.
    pub q_h: u32,
}

impl Capacities {
    pub fn new(m_ch: u32, n_axp: u32, q_l: u32, q_h: u32) -> Result<Self> {
        let caps = Self {
            m_ch,
            n_axp,
            q_l,
            q_h,
        };
        caps.validate()?;
        Ok(caps)
    }

    /// Isolated-cell capacities; the membrane capacities are set to 1 and only
    /// matter for bookkeeping.
    pub fn isolated(m_ch: u32, n_axp: u32) -> Result<Self> {
        Self::new(m_ch, n_axp, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_ch == 0 {
            return Err(Error::InvalidCapacity("M_CH must be positive"));
        }
        if self.n_axp == 0 {
            return Err(Error::InvalidCapacity("N_AXP must be positive"));
        }
        if self.q_l == 0 {
            return Err(Error::InvalidCapacity("Q_L must be positive"));
        }
        if self.q_h == 0 {
            return Err(Error::InvalidCapacity("Q_H must be positive"));
        }
        Ok(())
    }
}

/// Pool levels of a living cell, in units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pools {
    pub m_ch: u32,
    pub n_atp: u32,
    pub q_l: u32,
    pub q_h: u32,
}

impl Pools {
    /// Isolated-cell pools: membrane parked at `(Q_L, 0)`.
    pub fn isolated(m_ch: u32, n_atp: u32, caps: &Capacities) -> Self {
        Self {
            m_ch,
            n_atp,
            q_l: caps.q_l,
            q_h: 0,
        }
    }

    pub fn within(&self, caps: &Capacities) -> bool {
        self.m_ch <= caps.m_ch
            && self.n_atp <= caps.n_axp
            && self.q_l <= caps.q_l
            && self.q_h <= caps.q_h
    }
}

impl fmt::Display for Pools {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.m_ch, self.n_atp, self.q_l, self.q_h
        )
    }
}

/// Internal state of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Alive(Pools),
    Dead,
}

impl CellState {
    pub fn is_dead(&self) -> bool {
        matches!(self, CellState::Dead)
    }

    pub fn pools(&self) -> Option<&Pools> {
        match self {
            CellState::Alive(p) => Some(p),
            CellState::Dead => None,
        }
    }
}

/// Index over the transient states of an isolated cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsolatedSpace {
    caps: Capacities,
}

impl IsolatedSpace {
    pub fn new(caps: Capacities) -> Result<Self> {
        caps.validate()?;
        (caps.m_ch as u64 + 1)
            .checked_mul(caps.n_axp as u64 + 1)
            .filter(|&n| n <= usize::MAX as u64)
            .ok_or(Error::IndexOverflow)?;
        Ok(Self { caps })
    }

    pub fn capacities(&self) -> &Capacities {
        &self.caps
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.caps.m_ch as usize + 1) * (self.caps.n_axp as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(m_ch, n_atp)` of state `i`.
    #[inline]
    pub fn levels(&self, i: usize) -> (u32, u32) {
        let stride = self.caps.n_axp as usize + 1;
        ((i / stride) as u32, (i % stride) as u32)
    }

    pub fn state(&self, i: usize) -> Result<Pools> {
        if i >= self.len() {
            return Err(Error::StateOutOfRange(i));
        }
        let (m, n) = self.levels(i);
        Ok(Pools::isolated(m, n, &self.caps))
    }

    #[inline]
    pub fn index_of(&self, m_ch: u32, n_atp: u32) -> Option<usize> {
        (m_ch <= self.caps.m_ch && n_atp <= self.caps.n_axp)
            .then(|| m_ch as usize * (self.caps.n_axp as usize + 1) + n_atp as usize)
    }

    /// Index of `pools`, ignoring the membrane coordinates.
    pub fn index(&self, pools: &Pools) -> Option<usize> {
        self.index_of(pools.m_ch, pools.n_atp)
    }
}

/// Joint state of a cable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CableState {
    /// `(m_ch, n_atp)` per cell.
    pub cells: Vec<(u32, u32)>,
    /// `n_cells + 1` membrane pools.
    pub pools: Vec<u32>,
}

impl CableState {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Four-pool view of cell `i`: its HEEM is pool `i`, its LEEM pool `i + 1`.
    pub fn cell(&self, i: usize) -> Pools {
        let (m_ch, n_atp) = self.cells[i];
        Pools {
            m_ch,
            n_atp,
            q_l: self.pools[i + 1],
            q_h: self.pools[i],
        }
    }

    pub fn total_electrons(&self) -> u64 {
        self.cells.iter().map(|&(m, _)| m as u64).sum::<u64>()
            + self.pools.iter().map(|&q| q as u64).sum::<u64>()
    }
}

/// Mixed-radix index over the joint state of a cable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CableSpace {
    caps: Capacities,
    n_cells: usize,
    size: u128,
    dense_bound: u128,
}

impl CableSpace {
    pub fn new(caps: Capacities, n_cells: usize) -> Result<Self> {
        Self::with_dense_bound(caps, n_cells, DEFAULT_DENSE_BOUND)
    }

    pub fn with_dense_bound(caps: Capacities, n_cells: usize, dense_bound: u128) -> Result<Self> {
        caps.validate()?;
        if n_cells == 0 {
            return Err(Error::InvalidCapacity("a cable needs at least one cell"));
        }
        let per_cell = (caps.m_ch as u128 + 1) * (caps.n_axp as u128 + 1);
        let mut size: u128 = 1;
        for _ in 0..n_cells {
            size = size.checked_mul(per_cell).ok_or(Error::IndexOverflow)?;
        }
        for p in 0..=n_cells {
            size = size
                .checked_mul(Self::pool_capacity_of(&caps, n_cells, p) as u128 + 1)
                .ok_or(Error::IndexOverflow)?;
        }
        Ok(Self {
            caps,
            n_cells,
            size,
            dense_bound,
        })
    }

    fn pool_capacity_of(caps: &Capacities, n_cells: usize, pool: usize) -> u32 {
        if pool == 0 && n_cells > 0 {
            caps.q_h
        } else {
            caps.q_l
        }
    }

    pub fn capacities(&self) -> &Capacities {
        &self.caps
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_pools(&self) -> usize {
        self.n_cells + 1
    }

    /// Capacity of membrane pool `p`: pool 0 is a HEEM, every other pool is a
    /// LEEM (shared or boundary).
    pub fn pool_capacity(&self, p: usize) -> u32 {
        Self::pool_capacity_of(&self.caps, self.n_cells, p)
    }

    /// Number of joint states; may exceed `usize`.
    pub fn size(&self) -> u128 {
        self.size
    }

    pub fn dense_bound(&self) -> u128 {
        self.dense_bound
    }

    pub fn fits_dense(&self) -> bool {
        self.size <= self.dense_bound
    }

    /// Joint-state count as `usize`, refusing spaces above the dense bound.
    pub fn dense_len(&self) -> Result<usize> {
        if !self.fits_dense() {
            return Err(Error::DenseBoundExceeded {
                states: self.size,
                bound: self.dense_bound,
            });
        }
        usize::try_from(self.size).map_err(|_| Error::IndexOverflow)
    }

    pub fn contains(&self, s: &CableState) -> bool {
        s.cells.len() == self.n_cells
            && s.pools.len() == self.n_pools()
            && s.cells
                .iter()
                .all(|&(m, n)| m <= self.caps.m_ch && n <= self.caps.n_axp)
            && s.pools
                .iter()
                .enumerate()
                .all(|(p, &q)| q <= self.pool_capacity(p))
    }

    /// Radices in index order: `m_0, n_0, m_1, n_1, ..., pool_0, ..., pool_n`.
    fn radices(&self) -> impl Iterator<Item = u128> + '_ {
        let cells = (0..self.n_cells)
            .flat_map(move |_| [self.caps.m_ch as u128 + 1, self.caps.n_axp as u128 + 1]);
        let pools = (0..self.n_pools()).map(move |p| self.pool_capacity(p) as u128 + 1);
        cells.chain(pools)
    }

    pub fn index(&self, s: &CableState) -> Option<u128> {
        if !self.contains(s) {
            return None;
        }
        let digits = s
            .cells
            .iter()
            .flat_map(|&(m, n)| [m as u128, n as u128])
            .chain(s.pools.iter().map(|&q| q as u128));
        Some(
            self.radices()
                .zip(digits)
                .fold(0u128, |acc, (r, d)| acc * r + d),
        )
    }

    pub fn state(&self, index: u128) -> Result<CableState> {
        if index >= self.size {
            return Err(Error::StateOutOfRange(
                usize::try_from(index).unwrap_or(usize::MAX),
            ));
        }
        let radices: Vec<u128> = self.radices().collect();
        let mut digits = alloc::vec![0u32; radices.len()];
        let mut rest = index;
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = (rest % r) as u32;
            rest /= r;
        }
        let cells = digits[..2 * self.n_cells]
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect();
        let pools = digits[2 * self.n_cells..].to_vec();
        Ok(CableState { cells, pools })
    }
}

/// Indexed transient state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateIndex {
    Isolated(IsolatedSpace),
    Cable(CableSpace),
}

impl StateIndex {
    pub fn capacities(&self) -> &Capacities {
        match self {
            StateIndex::Isolated(s) => s.capacities(),
            StateIndex::Cable(s) => s.capacities(),
        }
    }

    /// Number of transient states as `u128`.
    pub fn size(&self) -> u128 {
        match self {
            StateIndex::Isolated(s) => s.len() as u128,
            StateIndex::Cable(s) => s.size(),
        }
    }

    pub fn dense_len(&self) -> Result<usize> {
        match self {
            StateIndex::Isolated(s) => Ok(s.len()),
            StateIndex::Cable(s) => s.dense_len(),
        }
    }
}

/// Index over the `(M_CH + 1)(N_AXP + 1)` states of an isolated cell.
pub fn build_isolated_space(caps: Capacities) -> Result<StateIndex> {
    IsolatedSpace::new(caps).map(StateIndex::Isolated)
}

/// Joint index over a cable of `n_cells` cells.
pub fn build_cable_space(caps: Capacities, n_cells: usize) -> Result<StateIndex> {
    CableSpace::new(caps, n_cells).map(StateIndex::Cable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn isolated_counts() {
        let s = IsolatedSpace::new(Capacities::isolated(4, 4).unwrap()).unwrap();
        assert_eq!(s.len(), 25);
        let s = IsolatedSpace::new(Capacities::isolated(20, 20).unwrap()).unwrap();
        assert_eq!(s.len(), 441);
        assert!(Capacities::isolated(0, 4).is_err());
        assert!(Capacities::isolated(4, 0).is_err());
    }

    #[test]
    fn isolated_ordering_is_m_outermost() {
        let s = IsolatedSpace::new(Capacities::isolated(2, 3).unwrap()).unwrap();
        assert_eq!(s.levels(0), (0, 0));
        assert_eq!(s.levels(1), (0, 1));
        assert_eq!(s.levels(4), (1, 0));
        assert_eq!(s.index_of(2, 3), Some(11));
        assert_eq!(s.index_of(3, 0), None);
        assert!(s.state(12).is_err());
    }

    #[test]
    fn isolated_round_trip_exhaustive() {
        for m in 1..=30 {
            for n in 1..=30 {
                let s = IsolatedSpace::new(Capacities::isolated(m, n).unwrap()).unwrap();
                assert_eq!(s.len(), ((m + 1) * (n + 1)) as usize);
                for i in 0..s.len() {
                    let p = s.state(i).unwrap();
                    assert_eq!(s.index(&p), Some(i));
                }
            }
        }
    }

    #[test]
    fn cable_counts() {
        let caps = Capacities::new(1, 1, 1, 1).unwrap();
        let two = CableSpace::new(caps, 2).unwrap();
        assert_eq!(two.size(), 128);
        assert_eq!(two.n_pools(), 3);

        let one = CableSpace::new(Capacities::new(3, 2, 2, 1).unwrap(), 1).unwrap();
        // (m, n) of the isolated cell times the two membrane coordinates.
        assert_eq!(one.size(), 4 * 3 * 2 * 3);

        let three = CableSpace::new(caps, 3).unwrap();
        // Two interior shared pools plus the boundary HEEM and LEEM.
        assert_eq!(three.n_pools(), 4);
        assert_eq!(three.size(), 4u128.pow(3) * 2u128.pow(4));
        assert!(CableSpace::new(caps, 0).is_err());
    }

    #[test]
    fn cable_round_trip_and_view() {
        let space = CableSpace::new(Capacities::new(2, 1, 2, 1).unwrap(), 2).unwrap();
        for i in 0..space.size() {
            let s = space.state(i).unwrap();
            assert_eq!(space.index(&s), Some(i));
        }
        let s = CableState {
            cells: vec![(2, 1), (0, 0)],
            pools: vec![1, 2, 0],
        };
        assert_eq!(
            s.cell(0),
            Pools {
                m_ch: 2,
                n_atp: 1,
                q_l: 2,
                q_h: 1
            }
        );
        assert_eq!(
            s.cell(1),
            Pools {
                m_ch: 0,
                n_atp: 0,
                q_l: 0,
                q_h: 2
            }
        );
        assert_eq!(s.total_electrons(), 5);
    }

    #[test]
    fn cable_dense_bound() {
        let caps = Capacities::new(20, 20, 5, 5).unwrap();
        let big = CableSpace::new(caps, 3).unwrap();
        assert!(!big.fits_dense());
        assert!(matches!(
            big.dense_len(),
            Err(Error::DenseBoundExceeded { .. })
        ));
        let tight =
            CableSpace::with_dense_bound(Capacities::new(1, 1, 1, 1).unwrap(), 2, 100).unwrap();
        assert!(tight.dense_len().is_err());
    }
}
