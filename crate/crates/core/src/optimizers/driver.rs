use std::time::Instant;

use rand::RngCore;

use super::config::{
    resolve, Estimator, InnerSolver, ObboConfig, PhiMode, ResolvedParams, SingleLevelMethod, SobboConfig, Variant,
};
use super::trace::{RunTrace, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::geometry::{prox_step, AdaptiveDiagState, DistanceGenerator, FeasibleSet, Regularizer};
use crate::hypergrad::{
    implicit_hypergradient, inner_gd, inner_newton, inner_sgd, itd_hypergradient, stochastic_hypergradient,
    InnerSolveResult, NeumannParams, WindowBuffer,
};
use crate::linalg::{all_finite, mean_with_divisor, Vector};
use crate::problems::{BilevelInstant, Noiseless, ProblemConstants, StochasticInstant};
use crate::rng::{streams, substream};

struct Estimates {
    raw: Vector,
    /// Already-averaged gradient; `None` routes `raw` through the window.
    smoothed: Option<Vector>,
    beta_next: Vector,
}

enum StepRule {
    Prox(PhiMode),
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vector,
        v: Vector,
        t: i32,
    },
    Sgdm {
        momentum: f64,
        buf: Option<Vector>,
    },
}

impl StepRule {
    fn single_level(method: SingleLevelMethod, dim: usize) -> Self {
        match method {
            SingleLevelMethod::Adam { beta1, beta2, epsilon } => StepRule::Adam {
                beta1,
                beta2,
                epsilon,
                m: Vector::zeros(dim),
                v: Vector::zeros(dim),
                t: 0,
            },
            SingleLevelMethod::Sgdm { momentum } => StepRule::Sgdm { momentum, buf: None },
        }
    }
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Diverged {
            step,
            what: what.to_string(),
        },
        other => other,
    }
}

fn stream_shape<I: BilevelInstant>(stream: &[I]) -> Result<(usize, usize, ProblemConstants)> {
    let first = stream.first().ok_or_else(|| invalid("empty stream"))?;
    let (d1, d2) = (first.lambda_dim(), first.beta_dim());
    if stream.iter().any(|s| s.lambda_dim() != d1 || s.beta_dim() != d2) {
        return Err(invalid("stream dimensions change over time"));
    }
    let all: Vec<ProblemConstants> = stream.iter().map(|s| s.constants()).collect();
    let envelope = ProblemConstants::envelope(&all).expect("stream is nonempty");
    envelope.validate()?;
    Ok((d1, d2, envelope))
}

fn clip(q: Vector, threshold: Option<f64>) -> Vector {
    match threshold {
        Some(thr) => {
            let sq = q.norm_squared();
            if sq > thr {
                q * (thr / sq).sqrt()
            } else {
                q
            }
        }
        None => q,
    }
}

fn drive<I: BilevelInstant>(
    stream: &[I],
    config: &ObboConfig,
    params: ResolvedParams,
    mut rule: StepRule,
    mut estimate: impl FnMut(usize, &Vector, &Vector) -> Result<Estimates>,
) -> Result<RunTrace> {
    let (d1, d2, _) = stream_shape(stream)?;
    let mut lambda = config.initial_lambda(d1)?;
    let mut beta = config.initial_beta(d2)?;
    let mut window = WindowBuffer::new(params.window, d1)?;
    let mut adaptive = match config.phi {
        PhiMode::Adaptive { beta, epsilon } => Some(AdaptiveDiagState::new(d1, beta, epsilon)?),
        PhiMode::Euclidean => None,
    };
    let alpha = params.alpha;
    let mut steps = Vec::with_capacity(stream.len());

    for idx in 0..stream.len() {
        let t = idx + 1;
        let started = Instant::now();
        let est = estimate(idx, &lambda, &beta).map_err(at_step(t))?;
        if !all_finite(&est.raw) {
            return Err(Error::Diverged {
                step: t,
                what: "hypergradient estimate".into(),
            });
        }
        let smoothed = match est.smoothed {
            Some(s) => s,
            None => {
                window.push(est.raw.clone())?;
                window.average()
            }
        };
        let q = clip(smoothed, config.clip_threshold);
        if !all_finite(&q) {
            return Err(Error::Diverged {
                step: t,
                what: "smoothed gradient".into(),
            });
        }
        let (direction, phi) = match &mut rule {
            StepRule::Prox(PhiMode::Adaptive { .. }) => {
                let state = adaptive.as_mut().expect("adaptive state exists for adaptive phi");
                state.update(&q)?;
                (q.clone(), state.generator())
            }
            StepRule::Prox(PhiMode::Euclidean) => (q.clone(), DistanceGenerator::euclidean(d1)),
            StepRule::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t: count,
            } => {
                *count += 1;
                *m = &*m * *beta1 + &q * (1.0 - *beta1);
                *v = &*v * *beta2 + q.component_mul(&q) * (1.0 - *beta2);
                let m_hat = &*m / (1.0 - beta1.powi(*count));
                let v_hat = &*v / (1.0 - beta2.powi(*count));
                let d = m_hat.zip_map(&v_hat, |a, b| a / (b.sqrt() + *epsilon));
                (d, DistanceGenerator::euclidean(d1))
            }
            StepRule::Sgdm { momentum, buf } => {
                let next = match buf.take() {
                    Some(b) => b * *momentum + &q,
                    None => q.clone(),
                };
                *buf = Some(next.clone());
                (next, DistanceGenerator::euclidean(d1))
            }
        };
        let next =
            prox_step(&direction, &lambda, alpha, &phi, &config.regularizer, &config.feasible).map_err(at_step(t))?;
        if !all_finite(&next) || !all_finite(&est.beta_next) {
            return Err(Error::Diverged {
                step: t,
                what: "iterate".into(),
            });
        }
        let gen_proj_norm_sq = ((&lambda - &next) / alpha).norm_squared();
        steps.push(StepRecord {
            t,
            lambda: std::mem::replace(&mut lambda, next),
            inner_final: est.beta_next.clone(),
            estimate: est.raw,
            smoothed: q,
            phi,
            gen_proj_norm_sq,
            elapsed: started.elapsed(),
        });
        beta = est.beta_next;
    }
    Ok(RunTrace {
        steps,
        final_lambda: lambda,
        final_beta: beta,
        params,
    })
}

fn deterministic_inner<I: BilevelInstant>(
    instant: &I,
    lambda: &Vector,
    beta: &Vector,
    config: &ObboConfig,
    params: &ResolvedParams,
) -> Result<InnerSolveResult> {
    match config.inner_solver {
        InnerSolver::Gd => inner_gd(instant, lambda, beta, params.eta, params.inner_steps),
        InnerSolver::Newton => inner_newton(instant, lambda, beta, params.inner_steps),
    }
}

fn deterministic_estimate<I: BilevelInstant>(
    instant: &I,
    lambda: &Vector,
    solve: &InnerSolveResult,
    estimator: Estimator,
    neumann_m: Option<usize>,
    rng: &mut dyn RngCore,
) -> Result<Vector> {
    match estimator {
        Estimator::Itd => itd_hypergradient(instant, lambda, solve),
        Estimator::Implicit => implicit_hypergradient(instant, lambda, solve.last()),
        Estimator::Neumann { .. } => {
            let params = NeumannParams {
                m: neumann_m.expect("resolved for the Neumann estimator"),
                l_g1: instant.constants().l_g1,
            };
            stochastic_hypergradient(&Noiseless(instant), lambda, solve.last(), params, rng)
        }
    }
}

fn resolved<I: BilevelInstant>(stream: &[I], config: &ObboConfig, variant: Variant) -> Result<ResolvedParams> {
    let (d1, d2, envelope) = stream_shape(stream)?;
    config.validate(d1, d2)?;
    Ok(resolve(config, None, None, &envelope, variant))
}

/// Deterministic OBBO with run seed 0 (only the Neumann estimator draws).
pub fn run_obbo<I: BilevelInstant>(stream: &[I], config: &ObboConfig) -> Result<RunTrace> {
    run_obbo_with_seed(stream, config, 0)
}

/// Deterministic OBBO: warm-started inner gradient descent, a hypergradient
/// estimate per round, window averaging and a Bregman prox step.
pub fn run_obbo_with_seed<I: BilevelInstant>(stream: &[I], config: &ObboConfig, seed: u64) -> Result<RunTrace> {
    let params = resolved(stream, config, Variant::Obbo)?;
    let mut rng = substream(seed, streams::ESTIMATOR);
    drive(
        stream,
        config,
        params,
        StepRule::Prox(config.phi),
        |idx, lambda, beta| {
            let inst = &stream[idx];
            let solve = deterministic_inner(inst, lambda, beta, config, &params)?;
            let raw = deterministic_estimate(inst, lambda, &solve, config.estimator, params.neumann_m, &mut rng)?;
            Ok(Estimates {
                raw,
                smoothed: None,
                beta_next: solve.last().clone(),
            })
        },
    )
}

/// Stochastic OBBO: minibatch inner SGD and the sampled Neumann estimator
/// at `(λ_t, β_{t+1})`.
pub fn run_sobbo<I: StochasticInstant>(stream: &[I], config: &SobboConfig, seed: u64) -> Result<RunTrace> {
    let (d1, d2, envelope) = stream_shape(stream)?;
    config.validate(d1, d2)?;
    let params = resolve(
        &config.obbo,
        config.batch_size,
        config.neumann_m,
        &envelope,
        Variant::Sobbo,
    );
    let batch = params.batch_size.expect("resolved for SOBBO");
    let m = params.neumann_m.expect("resolved for SOBBO");
    let mut inner_rng = substream(seed, streams::INNER_SAMPLES);
    let mut est_rng = substream(seed, streams::ESTIMATOR);
    drive(
        stream,
        &config.obbo,
        params,
        StepRule::Prox(config.obbo.phi),
        |idx, lambda, beta| {
            let inst = &stream[idx];
            let solve = inner_sgd(
                inst,
                lambda,
                beta,
                params.eta,
                params.inner_steps,
                batch,
                &mut inner_rng,
            )?;
            let beta_next = solve.last().clone();
            let neumann = NeumannParams {
                m,
                l_g1: inst.constants().l_g1,
            };
            let raw = stochastic_hypergradient(inst, lambda, &beta_next, neumann, &mut est_rng)?;
            Ok(Estimates {
                raw,
                smoothed: None,
                beta_next,
            })
        },
    )
}

/// OAGD baseline: every round re-solves and re-differentiates the last `w`
/// objectives at the current pair `(λ_t, β_t)` and takes a Euclidean step on
/// their average. The trace's `estimate` is the current round's term.
pub fn run_oagd<I: BilevelInstant>(stream: &[I], config: &ObboConfig, seed: u64) -> Result<RunTrace> {
    let config = ObboConfig {
        phi: PhiMode::Euclidean,
        ..config.clone()
    };
    let params = resolved(stream, &config, Variant::Oagd)?;
    let mut rng = substream(seed, streams::ESTIMATOR);
    let d1 = stream[0].lambda_dim();
    drive(
        stream,
        &config,
        params,
        StepRule::Prox(PhiMode::Euclidean),
        |idx, lambda, beta| {
            let mut terms = Vec::with_capacity(params.window);
            let mut beta_next = None;
            for back in 0..params.window.min(idx + 1) {
                let inst = &stream[idx - back];
                let solve = deterministic_inner(inst, lambda, beta, &config, &params)?;
                terms.push(deterministic_estimate(
                    inst,
                    lambda,
                    &solve,
                    config.estimator,
                    params.neumann_m,
                    &mut rng,
                )?);
                if back == 0 {
                    beta_next = Some(solve.last().clone());
                }
            }
            let smoothed = mean_with_divisor(terms.iter(), params.window, d1);
            Ok(Estimates {
                raw: terms.swap_remove(0),
                smoothed: Some(smoothed),
                beta_next: beta_next.expect("the current round is always evaluated"),
            })
        },
    )
}

/// SOBOW baseline: OBBO restricted to a Euclidean generator, no
/// regularizer and an unconstrained λ.
pub fn run_sobow<I: BilevelInstant>(stream: &[I], config: &ObboConfig, seed: u64) -> Result<RunTrace> {
    let config = ObboConfig {
        phi: PhiMode::Euclidean,
        regularizer: Regularizer::Zero,
        feasible: FeasibleSet::FullSpace,
        ..config.clone()
    };
    run_obbo_with_seed(stream, &config, seed)
}

/// Adam or SGDM on the windowed hypergradient estimates, followed by the
/// Euclidean prox of the configured regularizer and feasible set.
pub fn run_single_level<I: BilevelInstant>(
    stream: &[I],
    method: SingleLevelMethod,
    config: &ObboConfig,
    seed: u64,
) -> Result<RunTrace> {
    method.validate()?;
    let config = ObboConfig {
        phi: PhiMode::Euclidean,
        ..config.clone()
    };
    let params = resolved(stream, &config, Variant::Obbo)?;
    let mut rng = substream(seed, streams::ESTIMATOR);
    let rule = StepRule::single_level(method, stream[0].lambda_dim());
    drive(stream, &config, params, rule, |idx, lambda, beta| {
        let inst = &stream[idx];
        let solve = deterministic_inner(inst, lambda, beta, &config, &params)?;
        let raw = deterministic_estimate(inst, lambda, &solve, config.estimator, params.neumann_m, &mut rng)?;
        Ok(Estimates {
            raw,
            smoothed: None,
            beta_next: solve.last().clone(),
        })
    })
}
