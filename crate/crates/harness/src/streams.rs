//! Materializes configured streams.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use obbo_core::geometry::FeasibleSet;
use obbo_core::problems::{
    meta_toy_stream_with, quadratic_stream, spline_stream, BilevelInstant, MetaToyInstant, ProblemConstants,
    QuadraticInstant, SplineInstant, SplineStreamConfig, SplineTask, StreamConfig,
};

use crate::config::{SplineCsvSpec, StreamSpec};

/// A generated stream, one variant per problem family.
pub enum BuiltStream {
    Quadratic(Vec<QuadraticInstant>),
    /// Spline rounds together with the admissible λ box of the task.
    Spline(Vec<SplineInstant>, FeasibleSet),
    MetaToy(Vec<MetaToyInstant>),
}

impl BuiltStream {
    pub fn constants(&self) -> Vec<ProblemConstants> {
        match self {
            BuiltStream::Quadratic(s) => s.iter().map(|i| i.constants()).collect(),
            BuiltStream::Spline(s, _) => s.iter().map(|i| i.constants()).collect(),
            BuiltStream::MetaToy(s) => s.iter().map(|i| i.constants()).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            BuiltStream::Quadratic(s) => s.len(),
            BuiltStream::Spline(s, _) => s.len(),
            BuiltStream::MetaToy(s) => s.len(),
        }
    }

    /// `(d1, d2)`; `None` for an empty stream.
    pub fn dims(&self) -> Option<(usize, usize)> {
        fn of<I: BilevelInstant>(s: &[I]) -> Option<(usize, usize)> {
            s.first().map(|i| (i.lambda_dim(), i.beta_dim()))
        }
        match self {
            BuiltStream::Quadratic(s) => of(s),
            BuiltStream::Spline(s, _) => of(s),
            BuiltStream::MetaToy(s) => of(s),
        }
    }
}

fn load_spline_csv(spec: &SplineCsvSpec, base: &Path) -> Result<SplineTask> {
    let path = if spec.path.is_absolute() {
        spec.path.clone()
    } else {
        base.join(&spec.path)
    };
    let file = fs::File::open(&path).with_context(|| format!("cannot open spline data {}", path.display()))?;
    Ok(SplineTask::from_csv(
        file,
        spec.knots.clone(),
        spec.lambda_lower,
        spec.lambda_upper,
    )?)
}

/// Builds the stream for one run; `seed` replaces the configured stream seed.
/// Relative data paths resolve against `base`.
pub fn build_stream(spec: &StreamSpec, seed: u64, base: &Path) -> Result<BuiltStream> {
    Ok(match spec {
        StreamSpec::Quadratic(cfg) => BuiltStream::Quadratic(quadratic_stream(&StreamConfig { seed, ..cfg.clone() })?),
        StreamSpec::MetaToy(m) => {
            let cfg = StreamConfig {
                seed,
                ..m.stream.clone()
            };
            BuiltStream::MetaToy(meta_toy_stream_with(&cfg, m.gamma, m.options)?)
        }
        StreamSpec::Spline(cfg) => {
            let task = SplineStreamConfig { seed, ..cfg.clone() }.generate()?;
            BuiltStream::Spline(spline_stream(&task)?, task.lambda_domain()?)
        }
        StreamSpec::SplineCsv(csv) => {
            let task = load_spline_csv(csv, base)?;
            BuiltStream::Spline(spline_stream(&task)?, task.lambda_domain()?)
        }
    })
}
