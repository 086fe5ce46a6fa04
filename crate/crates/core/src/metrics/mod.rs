//! Regret and regularity instrumentation. These functions are the only
//! consumers of the exact inner-solution oracles.

mod regret;
mod variation;

pub use regret::{blr_term, exact_hypergradients, hypergradient_error, regret_series, RegretSeries, RegretSetup};
pub use variation::{function_variation, path_variation, variation_report, SampleGrid, VariationReport};
