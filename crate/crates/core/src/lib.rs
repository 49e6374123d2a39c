//! Stochastic kinetics of electron transfer and ATP energetics in bacterial
//! cells and cables.
//!
//! A cell is a small network of queues (electron carriers, ATP, external
//! membrane pools) driven by Poisson events whose rates depend on the pool
//! levels and on the external donor/acceptor concentrations. This crate builds
//! the finite state space, the continuous-time Markov chain over it, transient
//! distributions, exact trajectories, lifetime statistics, and a
//! maximum-likelihood fit of the rate parameters from NADH/ATP time series.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod inference;
pub mod kinetics;
pub mod lifetime;
pub mod linalg;
pub mod sim;
pub mod state;
pub mod system;
pub mod transient;

pub use error::{Error, Result};
pub use inference::{
    convert_units, fit, fit_pi0, nll, nll_gradient, predict, FitOptions, FitResult, FitStatus,
    FullScale, ObservationMap, Prediction, Problem, TimeSeries,
};
pub use kinetics::{
    cable_rates, rate_atp_con, rate_atp_syn, rate_nadh_gen, CableCoefficients, DeathRate,
    EventKind, ExternalProfile, ExternalState, Mode, ParamVector, RateModel, Segment,
};
pub use lifetime::{expected_lifetime, lifetime, lifetime_pdf, Lifetime, LifetimeResult};
pub use linalg::DenseMatrix;
pub use sim::{
    simulate, simulate_cable, simulate_ensemble, CableTrajectory, EnsembleStats, Terminal,
    Trajectory,
};
pub use state::{
    build_cable_space, build_isolated_space, CableSpace, CableState, Capacities, CellState,
    IsolatedSpace, Pools, StateIndex,
};
pub use system::{build_system, MarkovSystem};
pub use transient::{
    step_matrix, transient_at, transient_piecewise, uniformization_oracle, uniformized_action,
};
