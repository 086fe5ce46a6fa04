use std::time::Duration;

use super::ResolvedParams;
use crate::geometry::DistanceGenerator;
use crate::linalg::Vector;

/// Everything a loop did at round `t`.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    /// `λ_t`, the point played at round `t`.
    pub lambda: Vector,
    /// `β_{t+1} = ω^K_t`, the last inner iterate.
    pub inner_final: Vector,
    /// Raw hypergradient estimate of round `t`.
    pub estimate: Vector,
    /// Window-averaged (and clipped) gradient fed to the step.
    pub smoothed: Vector,
    /// Generator of the step's Bregman divergence.
    pub phi: DistanceGenerator,
    /// `‖(λ_t − λ_{t+1}) / α‖²`.
    pub gen_proj_norm_sq: f64,
    pub elapsed: Duration,
}

// Wall-clock time is excluded so that reruns compare equal.
impl PartialEq for StepRecord {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.lambda == other.lambda
            && self.inner_final == other.inner_final
            && self.estimate == other.estimate
            && self.smoothed == other.smoothed
            && self.phi == other.phi
            && self.gen_proj_norm_sq == other.gen_proj_norm_sq
    }
}

/// Full record of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    pub final_lambda: Vector,
    pub final_beta: Vector,
    pub params: ResolvedParams,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `λ_1, …, λ_T`.
    pub fn lambdas(&self) -> impl Iterator<Item = &Vector> {
        self.steps.iter().map(|s| &s.lambda)
    }
}
