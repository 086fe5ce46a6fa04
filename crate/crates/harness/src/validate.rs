//! Advisory parameter checks against the stream's declared constants.
//!
//! Findings never stop a run. Warnings flag settings outside the ranges for
//! which the convergence guarantees hold; notes flag settings that are
//! valid but unusual.

use std::fmt;
use std::path::Path;

use obbo_core::optimizers::{resolve, Estimator, InnerSolver, Variant};
use obbo_core::problems::ProblemConstants;
use serde::Serialize;

use crate::config::{ExperimentConfig, HarnessConfig, OptimizerSpec};
use crate::streams::build_stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Note,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    pub experiment: String,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Note => "note",
        };
        write!(f, "{tag}: [{}] {}", self.experiment, self.message)
    }
}

/// Smallest number of inner steps for which the inner error contracts by
/// `1/T` over a run of `T` rounds: `⌈log T / log(1/(1 − ημ_g))⌉ + 1`.
pub fn recommended_inner_steps(horizon: usize, eta: f64, mu_g: f64) -> Option<usize> {
    let rate = 1.0 - eta * mu_g;
    if !(rate > 0.0 && rate < 1.0) {
        return None;
    }
    let t = (horizon.max(1) as f64).ln();
    Some((t / (1.0 / rate).ln()).ceil() as usize + 1)
}

/// Checks one experiment using the constants of its stream at the first
/// configured seed.
pub fn validate_experiment(exp: &ExperimentConfig, base: &Path) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |severity, message: String| {
        out.push(Finding {
            experiment: exp.name.clone(),
            severity,
            message,
        })
    };
    let seed = exp.seeds.first().copied().unwrap_or(0);
    let stream = match build_stream(&exp.stream, seed, base) {
        Ok(s) => s,
        Err(e) => {
            push(Severity::Error, format!("stream cannot be built: {e:#}"));
            return out;
        }
    };
    let Some((d1, d2)) = stream.dims() else {
        push(Severity::Error, "stream has no rounds".into());
        return out;
    };
    let cfg = exp.optimizer.obbo();
    let config_check = match &exp.optimizer {
        OptimizerSpec::Sobbo(s) => s.validate(d1, d2),
        _ => cfg.validate(d1, d2),
    };
    if let Err(e) = config_check {
        push(Severity::Error, format!("invalid optimizer parameters: {e}"));
        return out;
    }
    let all = stream.constants();
    let Some(c) = ProblemConstants::envelope(&all) else {
        return out;
    };
    let (variant, batch, m) = match &exp.optimizer {
        OptimizerSpec::Sobbo(s) => (Variant::Sobbo, s.batch_size, s.neumann_m),
        OptimizerSpec::Oagd(_) => (Variant::Oagd, None, None),
        _ => (Variant::Obbo, None, None),
    };
    let p = resolve(cfg, batch, m, &c, variant);
    let horizon = stream.horizon();
    let newton = variant != Variant::Sobbo && matches!(cfg.inner_solver, InnerSolver::Newton);

    match variant {
        Variant::Sobbo | Variant::Oagd if !newton => {
            let bound = 2.0 / (c.l_g1 + c.mu_g);
            if p.eta > bound {
                push(
                    Severity::Warning,
                    format!(
                        "inner step {:.4e} exceeds 2/(l_g1 + mu_g) = {bound:.4e}; the inner loop may not contract",
                        p.eta
                    ),
                );
            }
            if let (Variant::Sobbo, Some(s)) = (variant, p.batch_size) {
                if s != p.window {
                    push(
                        Severity::Note,
                        format!(
                            "batch size {s} differs from window {}; the variance bound assumes s = w",
                            p.window
                        ),
                    );
                }
            }
        }
        _ if newton => {}
        _ => {
            if p.eta >= 1.0 / c.mu_g {
                push(
                    Severity::Warning,
                    format!("inner step {:.4e} violates eta < 1/mu_g = {:.4e}", p.eta, 1.0 / c.mu_g),
                );
            } else if p.eta >= 1.0 / c.l_g1 {
                push(
                    Severity::Warning,
                    format!("inner step {:.4e} violates eta < 1/l_g1 = {:.4e}", p.eta, 1.0 / c.l_g1),
                );
            }
        }
    }

    if variant == Variant::Oagd {
        let natural = 2.0 / (c.l_g1 + c.mu_g);
        if cfg.eta.is_some_and(|e| (e - natural).abs() > 1e-12 * natural) || p.inner_steps != 1 {
            push(
                Severity::Note,
                format!("OAGD is normally run with eta = 2/(l_g1 + mu_g) = {natural:.4e} and one inner step"),
            );
        }
    }

    let alpha_bound = 3.0 / (4.0 * p.l_f_hyper);
    if p.alpha > alpha_bound {
        push(
            Severity::Warning,
            format!("outer step {:.4e} exceeds 3/(4 l_F) = {alpha_bound:.4e}", p.alpha),
        );
    }

    if variant == Variant::Obbo && matches!(cfg.estimator, Estimator::Itd) {
        if let Some(k) = recommended_inner_steps(horizon, p.eta, c.mu_g) {
            if p.inner_steps < k {
                push(
                    Severity::Warning,
                    format!(
                        "{} inner steps; at least {k} are needed for a 1/T inner error over {horizon} rounds",
                        p.inner_steps
                    ),
                );
            }
        }
    }
    out
}

/// Checks every experiment of a configuration.
pub fn validate_config(config: &HarnessConfig, base: &Path) -> Vec<Finding> {
    config
        .experiment
        .iter()
        .flat_map(|e| validate_experiment(e, base))
        .collect()
}
