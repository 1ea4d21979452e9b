//! Least squares Monte Carlo for finite-horizon portfolio allocation.
//!
//! The pipeline is: calibrate a first-order vector autoregression on
//! log-returns ([`market`]), simulate paths with randomized controls,
//! regress continuation values per node of a discrete simplex grid of
//! weights ([`grid`], [`regression`]), then refine the discrete argmax with
//! a local quadratic Ridge fit and adaptive bisection grids ([`solver`]).
//! Wealth moves under proportional, liquidity and impact costs ([`cost`])
//! and policies are scored by certainty-equivalent return ([`evaluation`]).

pub mod cost;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod market;
pub mod regression;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
