use crate::error::{invalid, Result};
use crate::geometry::{generalized_projection, DistanceGenerator, FeasibleSet, Regularizer};
use crate::hypergrad::exact_hypergradient;
use crate::linalg::{mean_with_divisor, Vector};
use crate::optimizers::RunTrace;
use crate::problems::ExactOracle;

/// Step size, window and composite structure the regret is measured with.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretSetup {
    pub alpha: f64,
    pub window: usize,
    pub regularizer: Regularizer,
    pub feasible: FeasibleSet,
}

/// Per-round bilevel local regret terms and their running sums, for the
/// generalized-projection form and the plain gradient-norm form.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretSeries {
    pub terms: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub euclidean_terms: Vec<f64>,
    pub euclidean_cumulative: Vec<f64>,
}

fn running_sum(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// `∇F_t(λ_t)` for every round of the trace.
pub fn exact_hypergradients<I: ExactOracle>(stream: &[I], trace: &RunTrace) -> Result<Vec<Vector>> {
    if trace.len() > stream.len() {
        return Err(invalid("trace is longer than the stream"));
    }
    trace
        .steps
        .iter()
        .zip(stream)
        .map(|(s, inst)| exact_hypergradient(inst, &s.lambda))
        .collect()
}

/// `‖G(λ_t, ∇F_{t,w}, α)‖²` under the step's generator.
pub fn blr_term(
    smoothed_gradient: &Vector,
    lambda: &Vector,
    alpha: f64,
    phi: &DistanceGenerator,
    regularizer: &Regularizer,
    feasible: &FeasibleSet,
) -> Result<f64> {
    Ok(generalized_projection(lambda, smoothed_gradient, alpha, phi, regularizer, feasible)?.norm_squared())
}

/// Bilevel local regret along a trace. The windowed gradient averages the
/// exact hypergradients of the last `w` rounds at their own iterates and
/// divides by `w`, so rounds before the first count as zero.
pub fn regret_series<I: ExactOracle>(stream: &[I], trace: &RunTrace, setup: &RegretSetup) -> Result<RegretSeries> {
    if setup.window == 0 {
        return Err(invalid("regret window must be at least 1"));
    }
    let grads = exact_hypergradients(stream, trace)?;
    let dim = trace.final_lambda.len();
    let mut terms = Vec::with_capacity(grads.len());
    let mut euclidean_terms = Vec::with_capacity(grads.len());
    for (i, step) in trace.steps.iter().enumerate() {
        let from = (i + 1).saturating_sub(setup.window);
        let smoothed = mean_with_divisor(grads[from..=i].iter(), setup.window, dim);
        terms.push(blr_term(
            &smoothed,
            &step.lambda,
            setup.alpha,
            &step.phi,
            &setup.regularizer,
            &setup.feasible,
        )?);
        euclidean_terms.push(smoothed.norm_squared());
    }
    Ok(RegretSeries {
        cumulative: running_sum(&terms),
        euclidean_cumulative: running_sum(&euclidean_terms),
        terms,
        euclidean_terms,
    })
}

/// `‖estimate_t − ∇F_t(λ_t)‖²` per round.
pub fn hypergradient_error<I: ExactOracle>(stream: &[I], trace: &RunTrace) -> Result<Vec<f64>> {
    let grads = exact_hypergradients(stream, trace)?;
    Ok(trace
        .steps
        .iter()
        .zip(grads)
        .map(|(s, g)| (&s.estimate - g).norm_squared())
        .collect())
}
