//! Inner solvers, hypergradient estimators and the time-smoothing window.
//!
//! The estimators only touch the oracle interface of an instant, with the
//! exception of [`exact_hypergradient`], which needs the inner minimizer and
//! serves as the reference for metrics and tests.

mod estimators;
mod inner;
mod window;

pub use estimators::{
    default_neumann_m, exact_hypergradient, implicit_hypergradient, itd_hypergradient, stochastic_hypergradient,
    NeumannParams,
};
pub use inner::{inner_gd, inner_newton, inner_sgd, InnerSolveResult};
pub use window::WindowBuffer;
