//! Online outer loops: OBBO and SOBBO, the OAGD and SOBOW baselines, and
//! Adam/SGDM applied to windowed hypergradient estimates.
//!
//! Optimizers only call the oracle interface of the instants. Exact inner
//! solutions stay with the metrics.

mod config;
mod driver;
mod trace;

pub use config::{
    resolve, Estimator, InnerSolver, ObboConfig, PhiMode, ResolvedParams, SingleLevelMethod, SobboConfig, Variant,
};
pub use driver::{run_oagd, run_obbo, run_obbo_with_seed, run_single_level, run_sobbo, run_sobow};
pub use trace::{RunTrace, StepRecord};
