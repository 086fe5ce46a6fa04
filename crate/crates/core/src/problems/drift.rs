use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Vector;

/// How fast a stream's optimal decisions move between rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    #[default]
    Static,
    /// Move of size `t^{-rate}` between rounds `t` and `t+1`.
    Decaying { rate: f64 },
    /// Cumulative displacement growing like `t^{rate}` with `rate < 1`.
    Sublinear { rate: f64 },
}

impl Drift {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Drift::Static => Ok(()),
            Drift::Decaying { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            Drift::Decaying { rate } => Err(invalid(format!("decay rate must be positive, got {rate}"))),
            Drift::Sublinear { rate } if (0.0..1.0).contains(&rate) => Ok(()),
            Drift::Sublinear { rate } => Err(invalid(format!("sublinear rate must lie in [0,1), got {rate}"))),
        }
    }

    /// Unscaled size of the move from round `t` to `t + 1` (`t ≥ 1`).
    pub fn step_norm(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            Drift::Static => 0.0,
            Drift::Decaying { rate } => t.powf(-rate),
            Drift::Sublinear { rate } => t.powf(rate) - (t - 1.0).powf(rate),
        }
    }
}

/// A drifting vector sequence `p_1, …, p_T`: each move has the drift's step
/// size in a uniformly random direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftPath {
    pub points: Vec<Vector>,
}

impl DriftPath {
    pub fn generate(start: Vector, drift: Drift, scale: f64, horizon: usize, rng: &mut dyn RngCore) -> Self {
        let dim = start.len();
        let mut points = Vec::with_capacity(horizon);
        let mut current = start;
        for t in 1..=horizon {
            points.push(current.clone());
            if t == horizon {
                break;
            }
            let size = scale * drift.step_norm(t);
            if size != 0.0 && dim > 0 {
                let dir = Vector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(&mut *rng) });
                let norm = dir.norm();
                if norm > 0.0 {
                    current += dir * (size / norm);
                }
            }
        }
        Self { points }
    }
}
