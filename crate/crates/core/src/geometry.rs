//! Bregman geometry for the outer update.
//!
//! Outer steps solve
//!
//! ```text
//! λ⁺ = argmin_{λ ∈ X} ⟨q, λ⟩ + h(λ) + (1/α) D_φ(λ, u)
//! ```
//!
//! for a quadratic distance generator `φ(λ) = ½ λᵀHλ` with diagonal `H`
//! (the Euclidean generator is `H = I`). Every supported combination of
//! generator, regularizer and feasible set is coordinate-separable, so the
//! minimizer is available in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_dim, check_finite, Vector};

/// Strongly convex distance generating function `φ(λ) = ½ λᵀ diag(H) λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceGenerator {
    diag: Option<Vector>,
    dim: usize,
    rho: f64,
}

impl DistanceGenerator {
    /// `φ(λ) = ½‖λ‖²`, strong-convexity modulus exactly 1.
    pub fn euclidean(dim: usize) -> Self {
        Self {
            diag: None,
            dim,
            rho: 1.0,
        }
    }

    /// Diagonal quadratic generator with modulus `min(diag)`.
    pub fn diagonal(diag: Vector) -> Result<Self> {
        let rho = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        Self::diagonal_with_rho(diag, rho)
    }

    /// Diagonal quadratic generator with an explicit modulus, which must not
    /// exceed any diagonal entry.
    pub fn diagonal_with_rho(diag: Vector, rho: f64) -> Result<Self> {
        check_finite("distance generator diagonal", &diag)?;
        if diag.is_empty() {
            return Err(invalid("distance generator needs at least one coordinate"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid(format!("strong-convexity modulus must be positive, got {rho}")));
        }
        if diag.iter().any(|&d| d < rho) {
            return Err(invalid("distance generator diagonal must dominate rho"));
        }
        Ok(Self {
            dim: diag.len(),
            diag: Some(diag),
            rho,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Strong-convexity modulus with respect to the Euclidean norm.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_euclidean(&self) -> bool {
        self.diag.is_none()
    }

    /// Diagonal entry `H_ii` (1 for the Euclidean generator).
    pub fn weight(&self, i: usize) -> f64 {
        self.diag.as_ref().map_or(1.0, |d| d[i])
    }

    pub fn diag(&self) -> Vector {
        match &self.diag {
            Some(d) => d.clone(),
            None => Vector::from_element(self.dim, 1.0),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * (0..self.dim).map(|i| self.weight(i) * x[i] * x[i]).sum::<f64>()
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.dim, (0..self.dim).map(|i| self.weight(i) * x[i]))
    }
}

/// Convex, possibly nonsmooth regularizer `h(λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    Zero,
    L1 {
        weight: f64,
    },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { weight } if weight >= 0.0 && weight.is_finite() => Ok(()),
            Regularizer::L1 { weight } => Err(invalid(format!("L1 weight must be nonnegative, got {weight}"))),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Regularizer::Zero => true,
            Regularizer::L1 { weight } => weight == 0.0,
        }
    }

    fn weight(&self) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight } => weight,
        }
    }
}

/// Closed convex feasible set for λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    #[default]
    FullSpace,
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let set = FeasibleSet::Box { lower, upper };
        set.validate(None)?;
        Ok(set)
    }

    /// Symmetric box `[-r, r]^dim`.
    pub fn cube(dim: usize, radius: f64) -> Result<Self> {
        Self::boxed(vec![-radius; dim], vec![radius; dim])
    }

    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            FeasibleSet::FullSpace => Ok(()),
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(invalid("box bounds have different lengths"));
                }
                if let Some(d) = dim {
                    if lower.len() != d {
                        return Err(Error::DimensionMismatch {
                            context: "feasible box",
                            expected: d,
                            got: lower.len(),
                        });
                    }
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !(l.is_finite() && u.is_finite() && l < u) {
                        return Err(invalid(format!(
                            "box bounds must satisfy lower < upper, got [{l}, {u}]"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_full_space(&self) -> bool {
        matches!(self, FeasibleSet::FullSpace)
    }

    pub fn contains(&self, x: &Vector) -> bool {
        match self {
            FeasibleSet::FullSpace => x.iter().all(|v| v.is_finite()),
            FeasibleSet::Box { lower, upper } => {
                x.len() == lower.len() && x.iter().enumerate().all(|(i, &v)| v >= lower[i] && v <= upper[i])
            }
        }
    }

    /// Diameter `S`; infinite for the full space.
    pub fn diameter(&self) -> f64 {
        match self {
            FeasibleSet::FullSpace => f64::INFINITY,
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) * (u - l))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn clamp_coord(&self, i: usize, v: f64) -> f64 {
        match self {
            FeasibleSet::FullSpace => v,
            FeasibleSet::Box { lower, upper } => v.clamp(lower[i], upper[i]),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &Vector) -> Vector {
        Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, &v)| self.clamp_coord(i, v)))
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match self {
            FeasibleSet::FullSpace => None,
            FeasibleSet::Box { lower, upper } => Some((lower, upper)),
        }
    }
}

/// `D_φ(x, y) = φ(x) − φ(y) − ⟨∇φ(y), x − y⟩`.
pub fn bregman_divergence(phi: &DistanceGenerator, x: &Vector, y: &Vector) -> Result<f64> {
    check_dim("bregman divergence x", x, phi.dim())?;
    check_dim("bregman divergence y", y, phi.dim())?;
    check_finite("bregman divergence x", x)?;
    check_finite("bregman divergence y", y)?;
    // For a quadratic generator the definition collapses to ½(x−y)ᵀH(x−y),
    // which avoids the cancellation of the three-term form.
    Ok(0.5
        * (0..phi.dim())
            .map(|i| {
                let d = x[i] - y[i];
                phi.weight(i) * d * d
            })
            .sum::<f64>())
}

fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Bregman proximal step: the minimizer over `X` of
/// `⟨q, λ⟩ + h(λ) + (1/α) D_φ(λ, u)`.
///
/// Per coordinate this is a scaled gradient step `u_i − α q_i / H_ii`, then
/// soft-thresholding at `α·weight / H_ii` for L1, then clamping to the box.
pub fn prox_step(
    q: &Vector,
    u: &Vector,
    alpha: f64,
    phi: &DistanceGenerator,
    h: &Regularizer,
    set: &FeasibleSet,
) -> Result<Vector> {
    let dim = phi.dim();
    check_dim("prox gradient", q, dim)?;
    check_dim("prox reference point", u, dim)?;
    check_finite("prox gradient", q)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {alpha}")));
    }
    set.validate(Some(dim))?;
    if !set.contains(u) {
        return Err(Error::Infeasible);
    }
    let weight = h.weight();
    let out = (0..dim).map(|i| {
        let hi = phi.weight(i);
        let step = u[i] - alpha * q[i] / hi;
        let shrunk = if weight > 0.0 {
            soft_threshold(step, alpha * weight / hi)
        } else {
            step
        };
        set.clamp_coord(i, shrunk)
    });
    Ok(Vector::from_iterator(dim, out))
}

/// Generalized projection `G(u, q, α) = (u − λ⁺) / α`.
pub fn generalized_projection(
    u: &Vector,
    q: &Vector,
    alpha: f64,
    phi: &DistanceGenerator,
    h: &Regularizer,
    set: &FeasibleSet,
) -> Result<Vector> {
    let next = prox_step(q, u, alpha, phi, h, set)?;
    Ok((u - next) / alpha)
}

/// Exponential average of squared gradients backing the adaptive diagonal
/// generator `H_t = diag(sqrt(avg_sq) + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveDiagState {
    avg_sq: Vector,
    beta: f64,
    epsilon: f64,
    rho_inf: f64,
}

impl AdaptiveDiagState {
    pub const DEFAULT_BETA: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(dim: usize, beta: f64, epsilon: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("averaging coefficient must lie in (0,1), got {beta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            avg_sq: Vector::zeros(dim),
            beta,
            epsilon,
            rho_inf: f64::INFINITY,
        })
    }

    pub fn from_avg_sq(avg_sq: Vector, beta: f64, epsilon: f64) -> Result<Self> {
        if avg_sq.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("averaged squares must be finite and nonnegative"));
        }
        let mut state = Self::new(avg_sq.len(), beta, epsilon)?;
        state.avg_sq = avg_sq;
        Ok(state)
    }

    pub fn avg_sq(&self) -> &Vector {
        &self.avg_sq
    }

    /// `avg_sq ← β·avg_sq + (1−β)·grad²`.
    pub fn update(&mut self, grad: &Vector) -> Result<()> {
        check_dim("adaptive update", grad, self.avg_sq.len())?;
        check_finite("adaptive update", grad)?;
        let beta = self.beta;
        self.avg_sq
            .iter_mut()
            .zip(grad.iter())
            .for_each(|(a, g)| *a = beta * *a + (1.0 - beta) * g * g);
        let rho = self.diag().min();
        self.rho_inf = self.rho_inf.min(rho);
        Ok(())
    }

    pub fn diag(&self) -> Vector {
        self.avg_sq.map(|a| a.sqrt() + self.epsilon)
    }

    /// Generator for the current step, with modulus `min(diag)`.
    pub fn generator(&self) -> DistanceGenerator {
        DistanceGenerator::diagonal(self.diag()).expect("adaptive diagonal is positive by construction")
    }

    /// Smallest per-step modulus seen so far (infinite before the first update).
    pub fn rho_infimum(&self) -> f64 {
        self.rho_inf
    }

    /// Generator for the current step carrying the running infimum of the
    /// per-step moduli instead of the current one.
    pub fn generator_with_global_rho(&self) -> DistanceGenerator {
        let diag = self.diag();
        let rho = self.rho_inf.min(diag.min());
        DistanceGenerator::diagonal_with_rho(diag, rho).expect("running infimum never exceeds the diagonal")
    }
}
