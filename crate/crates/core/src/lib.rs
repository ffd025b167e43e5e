//! Stochastic compositional minimax optimization.
//!
//! Solves `min_x max_y h(x) + E[f(E[g(.; xi)]; zeta)] - r(y)` where the inner
//! expectation sits on the primal block, the dual block or both. The crate
//! provides corrected stochastic descent-ascent methods that track the inner
//! expectation with an auxiliary variable, a variance-reduced proximal variant,
//! the stationarity measures used to judge them, a synthetic problem suite and
//! a batch-experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod harness;
pub mod measures;
pub mod oracle;
pub mod problems;
pub mod testing;
pub mod tracking;
pub mod types;

pub use error::{CodaError, Result};
pub use geometry::DomainSpec;
pub use oracle::{CompositionMode, OracleSample, Problem, ProblemMeta, SampleKind};
pub use types::{AlgoConfig, IterationRecord, Matrix, PrimalDualPoint, RunResult, Vector};
