use rand::{Rng, RngCore};

use super::InnerSolveResult;
use crate::error::{invalid, Result};
use crate::linalg::{check_dim, solve_spd, Vector};
use crate::problems::{BilevelInstant, ExactOracle, StochasticInstant};

/// `∇_λ f − ∇²_{λβ} g (∇²_{ββ} g)⁻¹ ∇_β f` at an arbitrary `β`, with the
/// Hessian assembled from HVPs and solved directly.
pub fn implicit_hypergradient<I: BilevelInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta: &Vector,
) -> Result<Vector> {
    check_dim("hypergradient lambda", lambda, instant.lambda_dim())?;
    check_dim("hypergradient beta", beta, instant.beta_dim())?;
    let hessian = instant.beta_hessian(lambda, beta);
    let v = solve_spd(&hessian, &instant.grad_f_beta(lambda, beta), "inner Hessian")?;
    Ok(instant.grad_f_lambda(lambda, beta) - instant.hvp_g_lambda_beta(lambda, beta, &v))
}

/// `∇F_t(λ)` by the implicit function theorem at the exact inner solution.
pub fn exact_hypergradient<I: ExactOracle + ?Sized>(instant: &I, lambda: &Vector) -> Result<Vector> {
    let beta = instant.inner_opt(lambda)?;
    implicit_hypergradient(instant, lambda, &beta)
}

/// Reverse-mode derivative of `λ ↦ f(λ, ω^K(λ))` through the unrolled inner
/// gradient steps, using only Hessian-vector products.
pub fn itd_hypergradient<I: BilevelInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    solve: &InnerSolveResult,
) -> Result<Vector> {
    check_dim("ITD lambda", lambda, instant.lambda_dim())?;
    if solve.lambda != *lambda {
        return Err(invalid("ITD trajectory was computed at a different lambda"));
    }
    if solve.trajectory.len() != solve.k + 1 {
        return Err(invalid(format!(
            "ITD trajectory has {} iterates, expected K + 1 = {}",
            solve.trajectory.len(),
            solve.k + 1
        )));
    }
    let last = solve.last();
    check_dim("ITD trajectory", last, instant.beta_dim())?;
    let eta = solve.eta;
    let mut v = instant.grad_f_beta(lambda, last);
    let mut acc = instant.grad_f_lambda(lambda, last);
    for omega in solve.trajectory[..solve.k].iter().rev() {
        acc -= instant.hvp_g_lambda_beta(lambda, omega, &v) * eta;
        let hv = instant.hvp_g_beta_beta(lambda, omega, &v);
        v -= hv * eta;
    }
    Ok(acc)
}

/// Truncation bound `m` and the scaling `ℓ_{g,1}` of the Neumann estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeumannParams {
    pub m: usize,
    pub l_g1: f64,
}

impl NeumannParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("Neumann bound m must be at least 1"));
        }
        if !(self.l_g1 > 0.0 && self.l_g1.is_finite()) {
            return Err(invalid(format!(
                "Neumann scaling l_g1 must be positive, got {}",
                self.l_g1
            )));
        }
        Ok(())
    }
}

/// `m = ⌈log w / log(1/(1 − μ_g/ℓ_{g,1}))⌉ + 1`, the bound that makes the
/// estimator bias comparable to the window's `1/w` variance.
pub fn default_neumann_m(window: usize, mu_g: f64, l_g1: f64) -> usize {
    let w = window.max(1) as f64;
    let ratio = 1.0 - mu_g / l_g1;
    if w <= 1.0 || ratio <= 0.0 {
        return 1;
    }
    let base = (1.0 / ratio).ln();
    ((w.ln() / base).ceil() as usize).saturating_add(1)
}

/// One draw of the sampled Neumann-series hypergradient at `(λ, β)`.
///
/// Draws `m̃ ~ U{0, …, m−1}`, one outer sample, `m̃` Hessian samples for the
/// truncated series and one cross-derivative sample, in that order.
pub fn stochastic_hypergradient<I: StochasticInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta: &Vector,
    params: NeumannParams,
    rng: &mut dyn RngCore,
) -> Result<Vector> {
    params.validate()?;
    check_dim("Neumann lambda", lambda, instant.lambda_dim())?;
    check_dim("Neumann beta", beta, instant.beta_dim())?;
    let m_tilde = rng.random_range(0..params.m);
    let (grad_lambda, mut v) = instant.grad_f_sampled(lambda, beta, rng);
    let inv_l = 1.0 / params.l_g1;
    for _ in 0..m_tilde {
        let hv = instant.hvp_g_beta_beta_sampled(lambda, beta, &v, rng);
        v -= hv * inv_l;
    }
    v *= params.m as f64 * inv_l;
    Ok(grad_lambda - instant.hvp_g_lambda_beta_sampled(lambda, beta, &v, rng))
}
