//! Synthetic time-varying quadratic bilevel stream.
//!
//! ```text
//! g_t(λ, β) = ½ (β − Aλ − b_t)ᵀ Q (β − Aλ − b_t)
//! f_t(λ, β) = ½ ‖β − c_t‖² + (r/2)‖λ‖² + a Σ_i cos(ω λ_i) + offset_t
//! ```
//!
//! `Q` has spectrum in `[μ_g, κ μ_g]`, so `β̂_t(λ) = Aλ + b_t` and
//! `F_t(λ) = ½‖Aλ + b_t − c_t‖² + (r/2)‖λ‖² + a Σ cos(ω λ_i) + offset_t`.
//! The cosine term makes `F_t` nonconvex once `a ω² > r` while keeping
//! `∇f_t` globally Lipschitz. Drift moves `b_t` and `c_t`.

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    isotropic_noise, BilevelInstant, Drift, DriftPath, ExactOracle, NoiseLevels, ProblemConstants, StochasticInstant,
};
use crate::error::{invalid, Result};
use crate::linalg::{sym_eig_range, Matrix, Vector};
use crate::rng::{streams, substream};

/// How the inner minimizer depends on λ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `A = U Λ^{-1/2} E √μ_g` with `Q = U Λ Uᵀ`: the inner conditioning
    /// carries over to `F_t`, whose λ-curvatures are `μ_g / Λ_ii ∈ [1/κ, 1]`
    /// along the coordinate axes.
    #[default]
    Aligned,
    /// Dense Gaussian `A` with entries of variance `1/d2`.
    Random,
}

/// Shape of the outer objective's λ-only part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterShape {
    pub ridge: f64,
    pub cos_amplitude: f64,
    pub cos_frequency: f64,
    /// Constant added to `f_t` per round: `offset_t = (t − 1) · offset_step`.
    pub offset_step: f64,
    /// Standard deviation of the initial shift and target coordinates.
    pub initial_scale: f64,
}

impl Default for OuterShape {
    fn default() -> Self {
        Self {
            ridge: 0.1,
            cos_amplitude: 0.1,
            cos_frequency: 1.0,
            offset_step: 0.0,
            initial_scale: 1.0,
        }
    }
}

impl OuterShape {
    fn l_f1(&self) -> f64 {
        (self.ridge + self.cos_amplitude.abs() * self.cos_frequency * self.cos_frequency).max(1.0)
    }
}

fn one() -> f64 {
    1.0
}

/// Generator parameters for the synthetic quadratic stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub d1: usize,
    pub d2: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub kappa_target: f64,
    #[serde(default = "one")]
    pub mu_g: f64,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default = "one")]
    pub drift_scale: f64,
    #[serde(default)]
    pub noise: NoiseLevels,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub outer: OuterShape,
}

impl StreamConfig {
    pub fn new(d1: usize, d2: usize, horizon: usize) -> Self {
        Self {
            d1,
            d2,
            horizon,
            kappa_target: 1.0,
            mu_g: 1.0,
            drift: Drift::Static,
            drift_scale: 1.0,
            noise: NoiseLevels::default(),
            seed: 0,
            coupling: Coupling::Aligned,
            outer: OuterShape::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(invalid("stream dimensions must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("stream horizon must be positive"));
        }
        if !(self.kappa_target >= 1.0 && self.kappa_target.is_finite()) {
            return Err(invalid(format!("kappa_target must be >= 1, got {}", self.kappa_target)));
        }
        if !(self.mu_g > 0.0 && self.mu_g.is_finite()) {
            return Err(invalid(format!("mu_g must be positive, got {}", self.mu_g)));
        }
        if !(self.drift_scale >= 0.0 && self.drift_scale.is_finite()) {
            return Err(invalid("drift_scale must be finite and nonnegative"));
        }
        if !(self.noise.sigma_f >= 0.0 && self.noise.sigma_g_beta >= 0.0) {
            return Err(invalid("noise levels must be nonnegative"));
        }
        self.drift.validate()
    }
}

/// Explicit description of one quadratic round.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticParts {
    pub t: usize,
    pub q: Matrix,
    pub a: Matrix,
    pub b: Vector,
    pub c: Vector,
    pub outer: OuterShape,
    pub offset: f64,
    pub noise: NoiseLevels,
}

#[derive(Debug)]
struct Shared {
    q: Matrix,
    a: Matrix,
    at_q: Matrix,
    outer: OuterShape,
    noise: NoiseLevels,
    constants: ProblemConstants,
}

/// One round of the quadratic stream.
#[derive(Clone, Debug)]
pub struct QuadraticInstant {
    t: usize,
    shared: Arc<Shared>,
    b: Vector,
    c: Vector,
    offset: f64,
}

impl QuadraticInstant {
    pub fn from_parts(parts: QuadraticParts) -> Result<Self> {
        let d2 = parts.q.nrows();
        if parts.q.ncols() != d2 || parts.a.nrows() != d2 || parts.b.len() != d2 || parts.c.len() != d2 {
            return Err(invalid("inconsistent quadratic instant dimensions"));
        }
        if (&parts.q - parts.q.transpose()).amax() > 1e-12 * (1.0 + parts.q.amax()) {
            return Err(invalid("Q must be symmetric"));
        }
        let (mu, l) = sym_eig_range(&parts.q);
        let constants = ProblemConstants {
            mu_g: mu,
            l_g1: l,
            l_g2: 0.0,
            l_f0: f64::INFINITY,
            l_f1: parts.outer.l_f1(),
        };
        constants.validate()?;
        Ok(Self::assemble(parts, constants))
    }

    fn assemble(parts: QuadraticParts, constants: ProblemConstants) -> Self {
        let at_q = parts.a.transpose() * &parts.q;
        Self {
            t: parts.t,
            shared: Arc::new(Shared {
                q: parts.q,
                a: parts.a,
                at_q,
                outer: parts.outer,
                noise: parts.noise,
                constants,
            }),
            b: parts.b,
            c: parts.c,
            offset: parts.offset,
        }
    }

    fn with_round(&self, t: usize, b: Vector, c: Vector, offset: f64) -> Self {
        Self {
            t,
            shared: Arc::clone(&self.shared),
            b,
            c,
            offset,
        }
    }

    /// Shift `b_t` of the inner minimizer.
    pub fn shift(&self) -> &Vector {
        &self.b
    }

    /// Outer target `c_t`.
    pub fn target(&self) -> &Vector {
        &self.c
    }

    pub fn q_matrix(&self) -> &Matrix {
        &self.shared.q
    }

    pub fn a_matrix(&self) -> &Matrix {
        &self.shared.a
    }

    pub fn outer_shape(&self) -> OuterShape {
        self.shared.outer
    }

    fn residual(&self, lambda: &Vector, beta: &Vector) -> Vector {
        beta - &self.shared.a * lambda - &self.b
    }

    fn lambda_part_grad(&self, lambda: &Vector) -> Vector {
        let o = &self.shared.outer;
        lambda.map(|x| o.ridge * x - o.cos_amplitude * o.cos_frequency * (o.cos_frequency * x).sin())
    }

    /// `∇F_t(λ) = Aᵀ(Aλ + b_t − c_t) + rλ − aω sin(ωλ)` from the explicit
    /// solution map; an independent route to the implicit formula.
    pub fn closed_form_hypergradient(&self, lambda: &Vector) -> Vector {
        let beta = &self.shared.a * lambda + &self.b;
        self.shared.a.transpose() * (beta - &self.c) + self.lambda_part_grad(lambda)
    }
}

impl BilevelInstant for QuadraticInstant {
    fn time(&self) -> usize {
        self.t
    }
    fn lambda_dim(&self) -> usize {
        self.shared.a.ncols()
    }
    fn beta_dim(&self) -> usize {
        self.shared.q.nrows()
    }
    fn constants(&self) -> ProblemConstants {
        self.shared.constants
    }

    fn f_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        let o = &self.shared.outer;
        0.5 * (beta - &self.c).norm_squared()
            + 0.5 * o.ridge * lambda.norm_squared()
            + o.cos_amplitude * lambda.iter().map(|x| (o.cos_frequency * x).cos()).sum::<f64>()
            + self.offset
    }

    fn g_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        let r = self.residual(lambda, beta);
        0.5 * r.dot(&(&self.shared.q * &r))
    }

    fn grad_f_lambda(&self, lambda: &Vector, _beta: &Vector) -> Vector {
        self.lambda_part_grad(lambda)
    }

    fn grad_f_beta(&self, _lambda: &Vector, beta: &Vector) -> Vector {
        beta - &self.c
    }

    fn grad_g_beta(&self, lambda: &Vector, beta: &Vector) -> Vector {
        &self.shared.q * self.residual(lambda, beta)
    }

    fn hvp_g_lambda_beta(&self, _lambda: &Vector, _beta: &Vector, v: &Vector) -> Vector {
        -(&self.shared.at_q * v)
    }

    fn hvp_g_beta_beta(&self, _lambda: &Vector, _beta: &Vector, v: &Vector) -> Vector {
        &self.shared.q * v
    }
}

impl StochasticInstant for QuadraticInstant {
    fn noise(&self) -> NoiseLevels {
        self.shared.noise
    }

    fn grad_g_beta_sampled(&self, lambda: &Vector, beta: &Vector, batch: usize, rng: &mut dyn RngCore) -> Vector {
        let exact = self.grad_g_beta(lambda, beta);
        let sigma = self.shared.noise.sigma_g_beta;
        if sigma == 0.0 {
            return exact;
        }
        let batch = batch.max(1);
        let d2 = exact.len();
        let mut acc = Vector::zeros(d2);
        for _ in 0..batch {
            acc += &exact + isotropic_noise(d2, sigma, rng);
        }
        acc / batch as f64
    }

    fn grad_f_sampled(&self, lambda: &Vector, beta: &Vector, rng: &mut dyn RngCore) -> (Vector, Vector) {
        let grad_lambda = self.grad_f_lambda(lambda, beta);
        let grad_beta = self.grad_f_beta(lambda, beta);
        let sigma = self.shared.noise.sigma_f;
        if sigma == 0.0 {
            return (grad_lambda, grad_beta);
        }
        // The sample perturbs the target: f(λ, β, ε) = ½‖β − c_t − ε‖² + ….
        let eps = isotropic_noise(grad_beta.len(), sigma, rng);
        (grad_lambda, grad_beta - eps)
    }

    // Sample noise only shifts b_t and c_t, so second derivatives are exact.
    fn hvp_g_lambda_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_lambda_beta(lambda, beta, v)
    }

    fn hvp_g_beta_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_beta_beta(lambda, beta, v)
    }
}

impl ExactOracle for QuadraticInstant {
    fn inner_opt(&self, lambda: &Vector) -> Result<Vector> {
        Ok(&self.shared.a * lambda + &self.b)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(&mut *rng) })
}

/// Generates the whole quadratic stream as a deterministic function of
/// `config.seed`.
pub fn quadratic_stream(config: &StreamConfig) -> Result<Vec<QuadraticInstant>> {
    config.validate()?;
    let (d1, d2) = (config.d1, config.d2);
    let mut rng = substream(config.seed, streams::GENERATOR);

    let basis = gaussian_matrix(d2, d2, &mut rng).qr().q();
    let spectrum: Vec<f64> = (0..d2)
        .map(|i| {
            let frac = if d2 == 1 { 0.0 } else { i as f64 / (d2 - 1) as f64 };
            config.mu_g * config.kappa_target.powf(frac)
        })
        .collect();
    let q = {
        let lam = Matrix::from_diagonal(&Vector::from_vec(spectrum.clone()));
        let q = &basis * lam * basis.transpose();
        (&q + q.transpose()) * 0.5
    };
    let a = match config.coupling {
        Coupling::Aligned => {
            let mut scaled = Matrix::zeros(d2, d1);
            for (j, &eig) in spectrum.iter().enumerate().take(d1.min(d2)) {
                let s = (config.mu_g / eig).sqrt();
                scaled.set_column(j, &(basis.column(j) * s));
            }
            scaled
        }
        Coupling::Random => gaussian_matrix(d2, d1, &mut rng) / (d2 as f64).sqrt(),
    };

    let scale = config.outer.initial_scale;
    let b1 = gaussian_matrix(d2, 1, &mut rng).column(0) * scale;
    let c1 = gaussian_matrix(d2, 1, &mut rng).column(0) * scale;
    let b_path = DriftPath::generate(b1, config.drift, config.drift_scale, config.horizon, &mut rng);
    let c_path = DriftPath::generate(c1, config.drift, config.drift_scale, config.horizon, &mut rng);

    let constants = ProblemConstants {
        mu_g: config.mu_g,
        l_g1: config.mu_g * config.kappa_target,
        l_g2: 0.0,
        l_f0: f64::INFINITY,
        l_f1: config.outer.l_f1(),
    };
    let first = QuadraticInstant::assemble(
        QuadraticParts {
            t: 1,
            q,
            a,
            b: b_path.points[0].clone(),
            c: c_path.points[0].clone(),
            outer: config.outer,
            offset: 0.0,
            noise: config.noise,
        },
        constants,
    );
    let stream = b_path
        .points
        .into_iter()
        .zip(c_path.points)
        .enumerate()
        .map(|(i, (b, c))| first.with_round(i + 1, b, c, i as f64 * config.outer.offset_step))
        .collect();
    Ok(stream)
}
