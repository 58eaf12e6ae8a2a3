//! Risk-sensitive allocation over a set of alternatives with i.i.d. payoffs.
//!
//! A decision maker splits value across `m` alternatives with a constant
//! feedback gain `K` on the unit simplex and rebalances every `n` stages.
//! The growth ratio over one decision period is `<K, R_n>`, where `R_n` is
//! the vector of compounded gross returns. This crate maximizes
//!
//! ```text
//! U(K) = (1/n) E[log <K, R_n>] - (rho / 2n^2) var(log <K, R_n>)
//! ```
//!
//! over the simplex. The objective never depends on the initial value, so
//! no API here accepts one.
//!
//! * [`payoff`] builds compound-return distributions, including the closed
//!   form for compounded uniform payoffs.
//! * [`objective`] evaluates `U`, the log-variance and the gradient exactly,
//!   by quadrature or by Monte Carlo.
//! * [`kkt`] checks first-order necessary conditions and solves the
//!   two-outcome betting problem.
//! * [`optimizer`] runs projected gradient ascent, a grid oracle and
//!   risk-aversion sweeps.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kkt;
pub mod objective;
pub mod optimizer;
pub mod payoff;
pub mod quadrature;
pub mod sampling;

pub use error::{Error, Result};
pub use kkt::{certify, kkt_residuals, solve_two_asset_betting, KktReport};
pub use objective::{
    AllocationVector, ContinuousUniformObjective, LogMoments, McConfig, MonteCarloObjective, Objective, ObjectiveValue,
    RiskSpec,
};
pub use optimizer::{
    grid_refine, maximize, project_to_simplex, sweep_rho, OptimizationResult, OptimizerOptions, SweepRow, Termination,
};
pub use payoff::{
    build_discrete_compound, uniform_to_exponential, CompoundReturnDistribution, ErlangCompoundDensity, PayoffAtom,
    PayoffModel, ReturnAtom, DEFAULT_ATOM_CAP,
};
pub use quadrature::QuadratureConfig;
pub use sampling::sample_compound;
