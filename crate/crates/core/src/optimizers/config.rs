use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{AdaptiveDiagState, FeasibleSet, Regularizer};
use crate::hypergrad::default_neumann_m;
use crate::linalg::Vector;
use crate::problems::ProblemConstants;

/// Distance-generating function used by the outer prox step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiMode {
    #[default]
    Euclidean,
    /// `φ_t(λ) = ½ λᵀ diag(sqrt(v_t) + ε) λ` with `v_t` the exponential
    /// average of squared smoothed gradients.
    Adaptive {
        #[serde(default = "default_phi_beta")]
        beta: f64,
        #[serde(default = "default_phi_epsilon")]
        epsilon: f64,
    },
}

fn default_phi_beta() -> f64 {
    AdaptiveDiagState::DEFAULT_BETA
}

fn default_phi_epsilon() -> f64 {
    AdaptiveDiagState::DEFAULT_EPSILON
}

impl PhiMode {
    pub fn adaptive() -> Self {
        PhiMode::Adaptive {
            beta: default_phi_beta(),
            epsilon: default_phi_epsilon(),
        }
    }
}

/// Hypergradient estimator of the deterministic loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Reverse-mode differentiation through the inner iterations.
    #[default]
    Itd,
    /// Implicit formula evaluated at the last inner iterate.
    Implicit,
    /// Sampled truncated Neumann series (noiseless oracles).
    Neumann {
        #[serde(default)]
        m: Option<usize>,
    },
}

/// Inner solver of the deterministic loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerSolver {
    /// `K` warm-started gradient steps with step size `η`.
    #[default]
    Gd,
    /// `K` Newton steps on the Hessian assembled from HVPs; for inner
    /// problems that are quadratic in `β` a single step solves them exactly.
    Newton,
}

fn one() -> usize {
    1
}

/// Outer and inner parameters shared by every loop. Unset step sizes are
/// derived from the stream's declared constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObboConfig {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "one")]
    pub inner_steps: usize,
    #[serde(default = "one")]
    pub window: usize,
    #[serde(default)]
    pub phi: PhiMode,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub feasible: FeasibleSet,
    /// Bound on the squared norm of the smoothed gradient.
    #[serde(default)]
    pub clip_threshold: Option<f64>,
    #[serde(default)]
    pub lambda0: Option<Vec<f64>>,
    #[serde(default)]
    pub beta0: Option<Vec<f64>>,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub inner_solver: InnerSolver,
}

impl Default for ObboConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            eta: None,
            inner_steps: 1,
            window: 1,
            phi: PhiMode::Euclidean,
            regularizer: Regularizer::Zero,
            feasible: FeasibleSet::FullSpace,
            clip_threshold: None,
            lambda0: None,
            beta0: None,
            estimator: Estimator::Itd,
            inner_solver: InnerSolver::Gd,
        }
    }
}

impl ObboConfig {
    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        for (name, value) in [
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("clip_threshold", self.clip_threshold),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.inner_steps == 0 {
            return Err(invalid("inner_steps must be at least 1"));
        }
        if self.window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        if let PhiMode::Adaptive { beta, epsilon } = self.phi {
            AdaptiveDiagState::new(d1, beta, epsilon)?;
        }
        if self.inner_solver == InnerSolver::Newton && self.estimator == Estimator::Itd {
            return Err(invalid(
                "the ITD estimator differentiates gradient-descent iterates; use the implicit or Neumann estimator with Newton inner steps",
            ));
        }
        if let Estimator::Neumann { m: Some(0) } = self.estimator {
            return Err(invalid("Neumann bound m must be at least 1"));
        }
        self.regularizer.validate()?;
        self.feasible.validate(Some(d1))?;
        let lambda0 = self.initial_lambda(d1)?;
        if !self.feasible.contains(&lambda0) {
            return Err(Error::Infeasible);
        }
        self.initial_beta(d2)?;
        Ok(())
    }

    /// `λ_1`: the configured point, or the projection of the origin.
    pub fn initial_lambda(&self, d1: usize) -> Result<Vector> {
        match &self.lambda0 {
            Some(v) if v.len() == d1 => Ok(Vector::from_column_slice(v)),
            Some(v) => Err(Error::DimensionMismatch {
                context: "lambda0",
                expected: d1,
                got: v.len(),
            }),
            None => Ok(self.feasible.project(&Vector::zeros(d1))),
        }
    }

    /// `β_1`: the configured point or zero.
    pub fn initial_beta(&self, d2: usize) -> Result<Vector> {
        match &self.beta0 {
            Some(v) if v.len() == d2 => Ok(Vector::from_column_slice(v)),
            Some(v) => Err(Error::DimensionMismatch {
                context: "beta0",
                expected: d2,
                got: v.len(),
            }),
            None => Ok(Vector::zeros(d2)),
        }
    }
}

/// Stochastic loop: the shared parameters plus the inner batch size `s` and
/// the Neumann bound `m` (defaults `s = w` and the window-matched `m`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SobboConfig {
    #[serde(default)]
    pub obbo: ObboConfig,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub neumann_m: Option<usize>,
}

impl SobboConfig {
    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        self.obbo.validate(d1, d2)?;
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.neumann_m == Some(0) {
            return Err(invalid("neumann_m must be at least 1"));
        }
        Ok(())
    }
}

/// First-order method of the single-level baselines (PyTorch defaults).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingleLevelMethod {
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_epsilon")]
        epsilon: f64,
    },
    Sgdm {
        #[serde(default = "sgdm_momentum")]
        momentum: f64,
    },
}

fn adam_beta1() -> f64 {
    0.9
}
fn adam_beta2() -> f64 {
    0.999
}
fn adam_epsilon() -> f64 {
    1e-8
}
fn sgdm_momentum() -> f64 {
    0.9
}

impl SingleLevelMethod {
    pub fn adam() -> Self {
        SingleLevelMethod::Adam {
            beta1: adam_beta1(),
            beta2: adam_beta2(),
            epsilon: adam_epsilon(),
        }
    }

    pub fn sgdm() -> Self {
        SingleLevelMethod::Sgdm {
            momentum: sgdm_momentum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SingleLevelMethod::Adam { beta1, beta2, epsilon } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                    return Err(invalid("Adam needs beta1, beta2 in [0,1) and epsilon > 0"));
                }
            }
            SingleLevelMethod::Sgdm { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(invalid("SGDM momentum must lie in [0,1)"));
                }
            }
        }
        Ok(())
    }
}

/// Which loop the parameters are resolved for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Obbo,
    Sobbo,
    Oagd,
}

/// Step sizes and sample counts actually used by a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub alpha: f64,
    pub eta: f64,
    pub inner_steps: usize,
    pub window: usize,
    pub batch_size: Option<usize>,
    pub neumann_m: Option<usize>,
    pub l_f_hyper: f64,
}

/// Fills unset parameters from the worst-case constants of the stream:
/// `η = 1/(2ℓ_{g,1})` (OAGD: `2/(ℓ_{g,1} + μ_g)`), `α = 3/(8ℓ_{F,1})`,
/// `s = w` and `m = ⌈log w / log(1/(1 − μ_g/ℓ_{g,1}))⌉ + 1`.
pub fn resolve(
    obbo: &ObboConfig,
    batch_size: Option<usize>,
    neumann_m: Option<usize>,
    constants: &ProblemConstants,
    variant: Variant,
) -> ResolvedParams {
    let l_f_hyper = constants.l_f_hyper();
    let eta = obbo.eta.unwrap_or(match variant {
        Variant::Oagd => 2.0 / (constants.l_g1 + constants.mu_g),
        _ => 1.0 / (2.0 * constants.l_g1),
    });
    let alpha = obbo.alpha.unwrap_or(3.0 / (8.0 * l_f_hyper));
    let default_m = || default_neumann_m(obbo.window, constants.mu_g, constants.l_g1);
    let (batch_size, neumann_m) = match variant {
        Variant::Sobbo => (
            Some(batch_size.unwrap_or(obbo.window)),
            Some(neumann_m.unwrap_or_else(default_m)),
        ),
        _ => (
            None,
            match obbo.estimator {
                Estimator::Neumann { m } => Some(m.unwrap_or_else(default_m)),
                _ => None,
            },
        ),
    };
    ResolvedParams {
        alpha,
        eta,
        inner_steps: obbo.inner_steps,
        window: obbo.window,
        batch_size,
        neumann_m,
        l_f_hyper,
    }
}
