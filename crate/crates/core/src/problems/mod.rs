//! Online bilevel problems.
//!
//! At round `t` a solver sees an outer objective `f_t(λ, β)` and an inner
//! objective `g_t(λ, β)` that is `μ_g`-strongly convex in `β`, through value,
//! gradient and Hessian-vector-product oracles. Exact inner minimizers are a
//! separate capability ([`ExactOracle`]) reserved for metrics and tests.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{materialize, Matrix, Vector};

mod drift;
mod meta;
mod quadratic;
mod spline;

pub use drift::{Drift, DriftPath};
pub use meta::{meta_toy_stream, meta_toy_stream_with, MetaToyInstant, MetaToyOptions};
pub use quadratic::{quadratic_stream, Coupling, OuterShape, QuadraticInstant, QuadraticParts, StreamConfig};
pub use spline::{
    linear_bspline_basis, roughness_penalty, spline_stream, SplineBatch, SplineInstant, SplineStreamConfig, SplineTask,
    DEFAULT_RIDGE_FLOOR,
};

/// Declared regularity constants of one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong convexity of `g_t` in `β`.
    pub mu_g: f64,
    /// Lipschitz constant of `∇_β g_t` in `β` (largest curvature of the inner problem).
    pub l_g1: f64,
    /// Lipschitz constant of the second derivatives of `g_t`.
    pub l_g2: f64,
    /// Lipschitz constant of `f_t`; may be infinite when it only multiplies `l_g2 = 0`.
    pub l_f0: f64,
    /// Lipschitz constant of `∇f_t`.
    pub l_f1: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_g > 0.0 && self.mu_g.is_finite()) {
            return Err(invalid(format!("mu_g must be positive, got {}", self.mu_g)));
        }
        if !(self.l_g1 >= self.mu_g && self.l_g1.is_finite()) {
            return Err(invalid(format!(
                "l_g1 = {} must be at least mu_g = {}",
                self.l_g1, self.mu_g
            )));
        }
        Ok(())
    }

    /// `κ_g = ℓ_{g,1} / μ_g`.
    pub fn kappa_g(&self) -> f64 {
        self.l_g1 / self.mu_g
    }

    fn second_order_term(&self) -> f64 {
        if self.l_g2 == 0.0 {
            0.0
        } else {
            self.l_f0 * self.l_g2 / self.mu_g * (1.0 + self.kappa_g())
        }
    }

    /// `M_f`: Lipschitz factor of the estimator error in `‖β − β̂(λ)‖`.
    pub fn m_f(&self) -> f64 {
        self.l_f1 * (1.0 + self.kappa_g()) + self.second_order_term()
    }

    /// `ℓ_{F,1}`: Lipschitz constant of the hypergradient.
    pub fn l_f_hyper(&self) -> f64 {
        self.l_f1 * (1.0 + self.kappa_g()) + self.second_order_term() + self.m_f() * self.kappa_g()
    }

    /// Worst-case constants over a window of rounds.
    pub fn envelope<'a>(all: impl IntoIterator<Item = &'a ProblemConstants>) -> Option<ProblemConstants> {
        all.into_iter().fold(None, |acc, c| {
            Some(match acc {
                None => *c,
                Some(a) => ProblemConstants {
                    mu_g: a.mu_g.min(c.mu_g),
                    l_g1: a.l_g1.max(c.l_g1),
                    l_g2: a.l_g2.max(c.l_g2),
                    l_f0: a.l_f0.max(c.l_f0),
                    l_f1: a.l_f1.max(c.l_f1),
                },
            })
        })
    }
}

/// Noise levels of a stochastic stream: total variances of the sampled
/// inner gradient (`σ²_{g_β}`) and outer gradient (`σ²_f`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseLevels {
    #[serde(default)]
    pub sigma_g_beta: f64,
    #[serde(default)]
    pub sigma_f: f64,
}

impl NoiseLevels {
    pub fn is_zero(&self) -> bool {
        self.sigma_g_beta == 0.0 && self.sigma_f == 0.0
    }
}

/// Round-`t` oracle bundle consumed by solvers.
pub trait BilevelInstant {
    /// One-based round index.
    fn time(&self) -> usize;
    fn lambda_dim(&self) -> usize;
    fn beta_dim(&self) -> usize;
    fn constants(&self) -> ProblemConstants;

    fn f_value(&self, lambda: &Vector, beta: &Vector) -> f64;
    fn g_value(&self, lambda: &Vector, beta: &Vector) -> f64;
    fn grad_f_lambda(&self, lambda: &Vector, beta: &Vector) -> Vector;
    fn grad_f_beta(&self, lambda: &Vector, beta: &Vector) -> Vector;
    fn grad_g_beta(&self, lambda: &Vector, beta: &Vector) -> Vector;
    /// `∇²_{λβ} g_t · v`, mapping a `d2` vector to a `d1` vector.
    fn hvp_g_lambda_beta(&self, lambda: &Vector, beta: &Vector, v: &Vector) -> Vector;
    /// `∇²_{ββ} g_t · v`.
    fn hvp_g_beta_beta(&self, lambda: &Vector, beta: &Vector, v: &Vector) -> Vector;

    /// Dense `∇²_{ββ} g_t`, assembled from HVPs.
    fn beta_hessian(&self, lambda: &Vector, beta: &Vector) -> Matrix {
        let d2 = self.beta_dim();
        materialize(d2, d2, |e| self.hvp_g_beta_beta(lambda, beta, e))
    }

    /// Dense `∇²_{λβ} g_t` (`d1 × d2`), assembled from HVPs.
    fn cross_hessian(&self, lambda: &Vector, beta: &Vector) -> Matrix {
        materialize(self.lambda_dim(), self.beta_dim(), |e| {
            self.hvp_g_lambda_beta(lambda, beta, e)
        })
    }
}

/// Sampled oracles of the stochastic model. Every sampled quantity is an
/// unbiased draw of the corresponding deterministic oracle.
pub trait StochasticInstant: BilevelInstant {
    fn noise(&self) -> NoiseLevels;

    /// Mean of `batch` independent draws of `∇_β g_t(λ, β, ζ)`.
    fn grad_g_beta_sampled(&self, lambda: &Vector, beta: &Vector, batch: usize, rng: &mut dyn RngCore) -> Vector;

    /// `(∇_λ f_t(λ, β, ε), ∇_β f_t(λ, β, ε))` for a single draw `ε`.
    fn grad_f_sampled(&self, lambda: &Vector, beta: &Vector, rng: &mut dyn RngCore) -> (Vector, Vector);

    fn hvp_g_lambda_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, rng: &mut dyn RngCore) -> Vector;

    fn hvp_g_beta_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, rng: &mut dyn RngCore) -> Vector;
}

/// Exact inner-solution access, used only by metrics and tests.
pub trait ExactOracle: BilevelInstant {
    /// `β̂_t(λ) = argmin_β g_t(λ, β)`.
    fn inner_opt(&self, lambda: &Vector) -> Result<Vector>;

    /// `F_t(λ) = f_t(λ, β̂_t(λ))`.
    fn outer_value(&self, lambda: &Vector) -> Result<f64> {
        let beta = self.inner_opt(lambda)?;
        Ok(self.f_value(lambda, &beta))
    }
}

/// Treats a deterministic instant as a stochastic one with no noise, so the
/// sampling-based estimators can run on deterministic streams.
#[derive(Clone, Copy, Debug)]
pub struct Noiseless<'a, I: ?Sized>(pub &'a I);

impl<I: BilevelInstant + ?Sized> BilevelInstant for Noiseless<'_, I> {
    fn time(&self) -> usize {
        self.0.time()
    }
    fn lambda_dim(&self) -> usize {
        self.0.lambda_dim()
    }
    fn beta_dim(&self) -> usize {
        self.0.beta_dim()
    }
    fn constants(&self) -> ProblemConstants {
        self.0.constants()
    }
    fn f_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        self.0.f_value(lambda, beta)
    }
    fn g_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        self.0.g_value(lambda, beta)
    }
    fn grad_f_lambda(&self, lambda: &Vector, beta: &Vector) -> Vector {
        self.0.grad_f_lambda(lambda, beta)
    }
    fn grad_f_beta(&self, lambda: &Vector, beta: &Vector) -> Vector {
        self.0.grad_f_beta(lambda, beta)
    }
    fn grad_g_beta(&self, lambda: &Vector, beta: &Vector) -> Vector {
        self.0.grad_g_beta(lambda, beta)
    }
    fn hvp_g_lambda_beta(&self, lambda: &Vector, beta: &Vector, v: &Vector) -> Vector {
        self.0.hvp_g_lambda_beta(lambda, beta, v)
    }
    fn hvp_g_beta_beta(&self, lambda: &Vector, beta: &Vector, v: &Vector) -> Vector {
        self.0.hvp_g_beta_beta(lambda, beta, v)
    }
}

impl<I: BilevelInstant + ?Sized> StochasticInstant for Noiseless<'_, I> {
    fn noise(&self) -> NoiseLevels {
        NoiseLevels::default()
    }
    fn grad_g_beta_sampled(&self, lambda: &Vector, beta: &Vector, _batch: usize, _rng: &mut dyn RngCore) -> Vector {
        self.0.grad_g_beta(lambda, beta)
    }
    fn grad_f_sampled(&self, lambda: &Vector, beta: &Vector, _rng: &mut dyn RngCore) -> (Vector, Vector) {
        (self.0.grad_f_lambda(lambda, beta), self.0.grad_f_beta(lambda, beta))
    }
    fn hvp_g_lambda_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.0.hvp_g_lambda_beta(lambda, beta, v)
    }
    fn hvp_g_beta_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.0.hvp_g_beta_beta(lambda, beta, v)
    }
}

/// Gaussian vector with total variance `sigma²` spread evenly over `dim`
/// coordinates.
pub(crate) fn isotropic_noise(dim: usize, sigma: f64, rng: &mut dyn RngCore) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    let scale = sigma / (dim as f64).sqrt();
    Vector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}
