//! Online bilevel optimization with Bregman proximal outer steps.
//!
//! The crate is split along the online protocol:
//!
//! - [`geometry`]: Bregman divergences, regularizers, feasible sets and the
//!   proximal step / generalized projection used by every outer update.
//! - [`problems`]: the time-indexed oracle a solver consumes, plus synthetic
//!   quadratic, smoothing-spline and toy meta-learning streams.
//! - [`hypergrad`]: inner solvers and hypergradient estimators (implicit,
//!   unrolled/ITD, truncated Neumann) and the time-smoothing window.
//! - [`optimizers`]: OBBO, SOBBO and the OAGD / SOBOW / Adam / SGDM baselines.
//! - [`metrics`]: bilevel local regret, path and function variation, and
//!   hypergradient error against exact oracles.
//!
//! Solvers only see [`problems::BilevelInstant`] (and its stochastic
//! extension). Exact solution oracles live behind [`problems::ExactOracle`],
//! which only the metrics and tests consume.

pub mod error;
pub mod geometry;
pub mod hypergrad;
pub mod linalg;
pub mod metrics;
pub mod optimizers;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
