//! Online smoothing-spline hyperparameter tuning.
//!
//! Each round fits a linear B-spline to a training batch with roughness
//! weight `λ` and scores the fit on a validation batch:
//!
//! ```text
//! g_t(λ, β) = ‖B_t β − y_t‖² + λ βᵀΩβ + ε‖β‖²
//! f_t(λ, β) = (1/n_val) ‖B_t^val β − y_t^val‖²
//! ```
//!
//! `Ω` penalizes slope jumps at interior knots, so it annihilates exactly the
//! linear functions. The floor `ε` keeps the inner problem strongly convex
//! on the whole λ box even when some knot sees no training data.

use std::io::Read;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{BilevelInstant, ExactOracle, NoiseLevels, ProblemConstants, StochasticInstant};
use crate::error::{invalid, Error, Result};
use crate::geometry::FeasibleSet;
use crate::linalg::{sym_eig_range, Matrix, Vector};
use crate::rng::{streams, substream};

/// One round of paired training and validation samples.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SplineBatch {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub val_x: Vec<f64>,
    pub val_y: Vec<f64>,
}

/// Knots, data batches and the λ domain of a spline tuning stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineTask {
    pub knots: Vec<f64>,
    pub batches: Vec<SplineBatch>,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub ridge_floor: f64,
}

pub const DEFAULT_RIDGE_FLOOR: f64 = 1e-8;

#[derive(Deserialize)]
struct CsvRow {
    t: usize,
    split: String,
    x: f64,
    y: f64,
}

impl SplineTask {
    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(invalid("a spline needs at least two knots"));
        }
        if !self.knots.iter().all(|k| k.is_finite()) || self.knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("knots must be finite and strictly increasing"));
        }
        if !(self.lambda_lower > 0.0 && self.lambda_upper > self.lambda_lower && self.lambda_upper.is_finite()) {
            return Err(invalid(format!(
                "lambda domain [{}, {}] must be a nonempty interval of positive reals",
                self.lambda_lower, self.lambda_upper
            )));
        }
        if !(self.ridge_floor > 0.0 && self.ridge_floor.is_finite()) {
            return Err(invalid("ridge floor must be positive"));
        }
        if self.batches.is_empty() {
            return Err(invalid("spline task has no batches"));
        }
        for (i, b) in self.batches.iter().enumerate() {
            if b.train_x.len() != b.train_y.len() || b.val_x.len() != b.val_y.len() {
                return Err(invalid(format!("batch {} has mismatched x/y lengths", i + 1)));
            }
            if b.train_x.is_empty() || b.val_x.is_empty() {
                return Err(invalid(format!(
                    "batch {} needs training and validation samples",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Feasible set of the roughness weight.
    pub fn lambda_domain(&self) -> Result<FeasibleSet> {
        FeasibleSet::boxed(vec![self.lambda_lower], vec![self.lambda_upper])
    }

    /// Reads `t,split,x,y` rows (header required, `split` is `train` or
    /// `val`, rounds numbered from 1 without gaps).
    pub fn from_csv(reader: impl Read, knots: Vec<f64>, lambda_lower: f64, lambda_upper: f64) -> Result<Self> {
        let mut batches: Vec<SplineBatch> = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| invalid(format!("spline csv row {}: {e}", line + 1)))?;
            if row.t == 0 {
                return Err(invalid("spline csv rounds are numbered from 1"));
            }
            if batches.len() < row.t {
                batches.resize_with(row.t, SplineBatch::default);
            }
            let batch = &mut batches[row.t - 1];
            match row.split.as_str() {
                "train" => {
                    batch.train_x.push(row.x);
                    batch.train_y.push(row.y);
                }
                "val" | "validation" => {
                    batch.val_x.push(row.x);
                    batch.val_y.push(row.y);
                }
                other => return Err(invalid(format!("unknown split {other:?} in spline csv"))),
            }
        }
        let task = Self {
            knots,
            batches,
            lambda_lower,
            lambda_upper,
            ridge_floor: DEFAULT_RIDGE_FLOOR,
        };
        task.validate()?;
        Ok(task)
    }
}

fn default_knots() -> usize {
    12
}
fn default_n_train() -> usize {
    40
}
fn default_n_val() -> usize {
    200
}
fn default_noise() -> f64 {
    0.3
}
fn default_freq_start() -> f64 {
    0.5
}
fn default_freq_end() -> f64 {
    2.5
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_lambda_lower() -> f64 {
    1e-6
}
fn default_lambda_upper() -> f64 {
    10.0
}

/// Synthetic drifting regression stream on `[0, 1]`: targets are
/// `amplitude · sin(2π ν_t x) + noise_t · z` with `ν_t` and `noise_t`
/// moving linearly between their start and end values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineStreamConfig {
    pub horizon: usize,
    #[serde(default = "default_knots")]
    pub n_knots: usize,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    #[serde(default = "default_noise")]
    pub noise_start: f64,
    #[serde(default = "default_noise")]
    pub noise_end: f64,
    #[serde(default = "default_freq_start")]
    pub freq_start: f64,
    #[serde(default = "default_freq_end")]
    pub freq_end: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_lambda_lower")]
    pub lambda_lower: f64,
    #[serde(default = "default_lambda_upper")]
    pub lambda_upper: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplineStreamConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            n_knots: default_knots(),
            n_train: default_n_train(),
            n_val: default_n_val(),
            noise_start: default_noise(),
            noise_end: default_noise(),
            freq_start: default_freq_start(),
            freq_end: default_freq_end(),
            amplitude: default_amplitude(),
            lambda_lower: default_lambda_lower(),
            lambda_upper: default_lambda_upper(),
            seed: 0,
        }
    }

    fn interpolate(&self, start: f64, end: f64, t: usize) -> f64 {
        if self.horizon <= 1 {
            return start;
        }
        start + (end - start) * (t - 1) as f64 / (self.horizon - 1) as f64
    }

    /// Frequency `ν_t` of the underlying signal.
    pub fn frequency(&self, t: usize) -> f64 {
        self.interpolate(self.freq_start, self.freq_end, t)
    }

    pub fn noise(&self, t: usize) -> f64 {
        self.interpolate(self.noise_start, self.noise_end, t)
    }

    /// Draws the batches; a deterministic function of `seed`.
    pub fn generate(&self) -> Result<SplineTask> {
        if self.horizon == 0 || self.n_knots < 2 || self.n_train == 0 || self.n_val == 0 {
            return Err(invalid(
                "spline stream needs a positive horizon, sample counts and at least two knots",
            ));
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return Err(invalid("spline noise levels must be nonnegative"));
        }
        let mut rng = substream(self.seed, streams::GENERATOR);
        let unit = Uniform::new(0.0, 1.0).map_err(|e| invalid(e.to_string()))?;
        let knots = (0..self.n_knots)
            .map(|i| i as f64 / (self.n_knots - 1) as f64)
            .collect();
        let draw = |n: usize, t: usize, rng: &mut dyn RngCore| -> (Vec<f64>, Vec<f64>) {
            let freq = self.frequency(t);
            let sd = self.noise(t);
            let xs: Vec<f64> = (0..n).map(|_| unit.sample(&mut *rng)).collect();
            let ys = xs
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    self.amplitude * (std::f64::consts::TAU * freq * x).sin() + sd * z
                })
                .collect();
            (xs, ys)
        };
        let batches = (1..=self.horizon)
            .map(|t| {
                let (train_x, train_y) = draw(self.n_train, t, &mut rng);
                let (val_x, val_y) = draw(self.n_val, t, &mut rng);
                SplineBatch {
                    train_x,
                    train_y,
                    val_x,
                    val_y,
                }
            })
            .collect();
        let task = SplineTask {
            knots,
            batches,
            lambda_lower: self.lambda_lower,
            lambda_upper: self.lambda_upper,
            ridge_floor: DEFAULT_RIDGE_FLOOR,
        };
        task.validate()?;
        Ok(task)
    }
}

/// Design matrix of the hat functions centred at `knots`. Rows of points
/// inside the knot span sum to one; points outside get a zero row.
pub fn linear_bspline_basis(knots: &[f64], xs: &[f64]) -> Matrix {
    let k = knots.len();
    let mut basis = Matrix::zeros(xs.len(), k);
    if k < 2 {
        return basis;
    }
    for (row, &x) in xs.iter().enumerate() {
        if !(x >= knots[0] && x <= knots[k - 1]) {
            continue;
        }
        // Index of the interval [knots[j], knots[j+1]] holding x.
        let j = knots.partition_point(|&kn| kn <= x).clamp(1, k - 1) - 1;
        let w = (x - knots[j]) / (knots[j + 1] - knots[j]);
        basis[(row, j)] = 1.0 - w;
        basis[(row, j + 1)] = w;
    }
    basis
}

/// `DᵀD` where row `i` of `D` is the slope change of the interpolating
/// polyline at interior knot `i + 1`, times the mean knot spacing. On
/// uniform knots the rows are plain second differences of the coefficients.
pub fn roughness_penalty(knots: &[f64]) -> Matrix {
    let k = knots.len();
    if k < 3 {
        return Matrix::zeros(k, k);
    }
    let spacing = (knots[k - 1] - knots[0]) / (k - 1) as f64;
    let mut d = Matrix::zeros(k - 2, k);
    for i in 0..k - 2 {
        let h0 = (knots[i + 1] - knots[i]) / spacing;
        let h1 = (knots[i + 2] - knots[i + 1]) / spacing;
        d[(i, i)] = 1.0 / h0;
        d[(i, i + 1)] = -1.0 / h0 - 1.0 / h1;
        d[(i, i + 2)] = 1.0 / h1;
    }
    d.transpose() * d
}

#[derive(Debug)]
struct SplineShared {
    omega: Matrix,
    ridge: f64,
    lambda_lower: f64,
    lambda_upper: f64,
}

/// One round of the spline tuning stream; `λ` is one-dimensional.
#[derive(Clone, Debug)]
pub struct SplineInstant {
    t: usize,
    shared: Arc<SplineShared>,
    train_basis: Matrix,
    train_y: Vector,
    val_basis: Matrix,
    val_y: Vector,
    gram: Matrix,
    moment: Vector,
    constants: ProblemConstants,
}

impl SplineInstant {
    fn lambda(lambda: &Vector) -> f64 {
        lambda[0]
    }

    /// `BᵀB + λΩ + εI`, half the inner Hessian.
    pub fn normal_matrix(&self, lambda: f64) -> Matrix {
        let k = self.gram.nrows();
        &self.gram + &self.shared.omega * lambda + Matrix::identity(k, k) * self.shared.ridge
    }

    pub fn penalty(&self) -> &Matrix {
        &self.shared.omega
    }

    pub fn train_basis(&self) -> &Matrix {
        &self.train_basis
    }

    pub fn train_targets(&self) -> &Vector {
        &self.train_y
    }

    pub fn val_basis(&self) -> &Matrix {
        &self.val_basis
    }

    pub fn val_targets(&self) -> &Vector {
        &self.val_y
    }

    /// Validation MSE of the fitted spline at roughness weight `λ`.
    pub fn validation_mse(&self, lambda: f64) -> Result<f64> {
        self.outer_value(&Vector::from_element(1, lambda))
    }

    /// `∇F_t(λ)` through the derivative of the solution path,
    /// `dβ̂/dλ = −(BᵀB + λΩ + εI)⁻¹ Ω β̂`.
    pub fn closed_form_hypergradient(&self, lambda: &Vector) -> Result<Vector> {
        let lam = Self::lambda(lambda);
        let chol = self
            .normal_matrix(lam)
            .cholesky()
            .ok_or(Error::Singular("spline normal equations"))?;
        let beta = chol.solve(&self.moment);
        let dbeta = -chol.solve(&(&self.shared.omega * &beta));
        Ok(Vector::from_element(1, self.grad_f_beta(lambda, &beta).dot(&dbeta)))
    }

    fn build(t: usize, shared: Arc<SplineShared>, knots: &[f64], batch: &SplineBatch) -> Result<Self> {
        let train_basis = linear_bspline_basis(knots, &batch.train_x);
        let val_basis = linear_bspline_basis(knots, &batch.val_x);
        let train_y = Vector::from_vec(batch.train_y.clone());
        let val_y = Vector::from_vec(batch.val_y.clone());
        let gram = train_basis.transpose() * &train_basis;
        let moment = train_basis.transpose() * &train_y;
        let mut inst = Self {
            t,
            shared,
            train_basis,
            train_y,
            val_basis,
            val_y,
            gram,
            moment,
            constants: ProblemConstants {
                mu_g: 1.0,
                l_g1: 1.0,
                l_g2: 0.0,
                l_f0: 0.0,
                l_f1: 0.0,
            },
        };
        inst.constants = inst.derive_constants()?;
        Ok(inst)
    }

    // The spectrum of BᵀB + λΩ + εI is monotone in λ because Ω ⪰ 0, so the
    // box endpoints bound the inner curvature. f is not globally Lipschitz;
    // its gradient norm at the inner solutions over a log grid of the box
    // stands in for ℓ_{f,0}.
    fn derive_constants(&self) -> Result<ProblemConstants> {
        let (lo, hi) = (self.shared.lambda_lower, self.shared.lambda_upper);
        let (mu_half, _) = sym_eig_range(&self.normal_matrix(lo));
        let (_, l_half) = sym_eig_range(&self.normal_matrix(hi));
        let (_, omega_max) = sym_eig_range(&self.shared.omega);
        let n_val = self.val_y.len() as f64;
        let (_, val_max) = sym_eig_range(&(self.val_basis.transpose() * &self.val_basis));
        let mut l_f0: f64 = 0.0;
        for i in 0..5 {
            let lam = lo * (hi / lo).powf(i as f64 / 4.0);
            let lv = Vector::from_element(1, lam);
            let beta = self.inner_opt(&lv)?;
            l_f0 = l_f0.max(self.grad_f_beta(&lv, &beta).norm());
        }
        let constants = ProblemConstants {
            mu_g: 2.0 * mu_half,
            l_g1: 2.0 * l_half,
            l_g2: 2.0 * omega_max,
            l_f0,
            l_f1: (2.0 * val_max / n_val).max(f64::MIN_POSITIVE),
        };
        constants.validate()?;
        Ok(constants)
    }
}

impl BilevelInstant for SplineInstant {
    fn time(&self) -> usize {
        self.t
    }
    fn lambda_dim(&self) -> usize {
        1
    }
    fn beta_dim(&self) -> usize {
        self.gram.nrows()
    }
    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn f_value(&self, _lambda: &Vector, beta: &Vector) -> f64 {
        (&self.val_basis * beta - &self.val_y).norm_squared() / self.val_y.len() as f64
    }

    fn g_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        (&self.train_basis * beta - &self.train_y).norm_squared()
            + Self::lambda(lambda) * beta.dot(&(&self.shared.omega * beta))
            + self.shared.ridge * beta.norm_squared()
    }

    fn grad_f_lambda(&self, _lambda: &Vector, _beta: &Vector) -> Vector {
        Vector::zeros(1)
    }

    fn grad_f_beta(&self, _lambda: &Vector, beta: &Vector) -> Vector {
        let residual = &self.val_basis * beta - &self.val_y;
        self.val_basis.transpose() * residual * (2.0 / self.val_y.len() as f64)
    }

    fn grad_g_beta(&self, lambda: &Vector, beta: &Vector) -> Vector {
        (self.normal_matrix(Self::lambda(lambda)) * beta - &self.moment) * 2.0
    }

    fn hvp_g_lambda_beta(&self, _lambda: &Vector, beta: &Vector, v: &Vector) -> Vector {
        Vector::from_element(1, 2.0 * (&self.shared.omega * beta).dot(v))
    }

    fn hvp_g_beta_beta(&self, lambda: &Vector, _beta: &Vector, v: &Vector) -> Vector {
        self.normal_matrix(Self::lambda(lambda)) * v * 2.0
    }
}

// The spline rounds are deterministic: every draw is the exact oracle.
impl StochasticInstant for SplineInstant {
    fn noise(&self) -> NoiseLevels {
        NoiseLevels::default()
    }
    fn grad_g_beta_sampled(&self, lambda: &Vector, beta: &Vector, _batch: usize, _rng: &mut dyn RngCore) -> Vector {
        self.grad_g_beta(lambda, beta)
    }
    fn grad_f_sampled(&self, lambda: &Vector, beta: &Vector, _rng: &mut dyn RngCore) -> (Vector, Vector) {
        (self.grad_f_lambda(lambda, beta), self.grad_f_beta(lambda, beta))
    }
    fn hvp_g_lambda_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_lambda_beta(lambda, beta, v)
    }
    fn hvp_g_beta_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_beta_beta(lambda, beta, v)
    }
}

impl ExactOracle for SplineInstant {
    fn inner_opt(&self, lambda: &Vector) -> Result<Vector> {
        let chol = self
            .normal_matrix(Self::lambda(lambda))
            .cholesky()
            .ok_or(Error::Singular("spline normal equations"))?;
        Ok(chol.solve(&self.moment))
    }
}

/// Builds one instant per batch of `task`.
pub fn spline_stream(task: &SplineTask) -> Result<Vec<SplineInstant>> {
    task.validate()?;
    let shared = Arc::new(SplineShared {
        omega: roughness_penalty(&task.knots),
        ridge: task.ridge_floor,
        lambda_lower: task.lambda_lower,
        lambda_upper: task.lambda_upper,
    });
    task.batches
        .iter()
        .enumerate()
        .map(|(i, b)| SplineInstant::build(i + 1, Arc::clone(&shared), &task.knots, b))
        .collect()
}
