//! Toy online meta-learning stream on linear models.
//!
//! Round `t` brings a task with weights `w_t` around a drifting centre. The
//! task-specific parameters `β` are fit with a proximal pull towards the
//! meta-parameters `λ`:
//!
//! ```text
//! g_t(λ, β) = ½‖X_t β − y_t‖² + (γ/2)‖λ − β‖²
//! f_t(λ, β) = (1/2n_val) ‖X_t^val β − y_t^val‖²
//! ```

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    isotropic_noise, BilevelInstant, DriftPath, ExactOracle, NoiseLevels, ProblemConstants, StochasticInstant,
    StreamConfig,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{sym_eig_range, Matrix, Vector};
use crate::rng::{streams, substream};

fn default_n_train() -> usize {
    10
}
fn default_n_val() -> usize {
    20
}
fn default_spread() -> f64 {
    0.3
}
fn default_label_noise() -> f64 {
    0.1
}

/// Shape of the task distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaToyOptions {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    /// Standard deviation of a task's weights around the current centre.
    #[serde(default = "default_spread")]
    pub task_spread: f64,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    /// Serve the first task at every round.
    #[serde(default)]
    pub repeat_task: bool,
}

impl Default for MetaToyOptions {
    fn default() -> Self {
        Self {
            n_train: default_n_train(),
            n_val: default_n_val(),
            task_spread: default_spread(),
            label_noise: default_label_noise(),
            repeat_task: false,
        }
    }
}

#[derive(Clone, Debug)]
struct TaskData {
    train_x: Matrix,
    train_y: Vector,
    val_x: Matrix,
    val_y: Vector,
    gram: Matrix,
    moment: Vector,
    constants: ProblemConstants,
}

/// One round of the meta-learning stream (`d1 = d2`).
#[derive(Clone, Debug)]
pub struct MetaToyInstant {
    t: usize,
    gamma: f64,
    noise: NoiseLevels,
    task: Arc<TaskData>,
}

impl MetaToyInstant {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn inner_matrix(&self) -> Matrix {
        let d = self.task.gram.nrows();
        &self.task.gram + Matrix::identity(d, d) * self.gamma
    }

    /// Gradient of the validation loss with the task parameters set to `λ`.
    pub fn validation_gradient(&self, point: &Vector) -> Vector {
        self.grad_f_beta(point, point)
    }

    /// Shares the task data of this round.
    pub fn same_task(&self, other: &MetaToyInstant) -> bool {
        Arc::ptr_eq(&self.task, &other.task)
    }
}

impl BilevelInstant for MetaToyInstant {
    fn time(&self) -> usize {
        self.t
    }
    fn lambda_dim(&self) -> usize {
        self.task.gram.nrows()
    }
    fn beta_dim(&self) -> usize {
        self.task.gram.nrows()
    }
    fn constants(&self) -> ProblemConstants {
        self.task.constants
    }

    fn f_value(&self, _lambda: &Vector, beta: &Vector) -> f64 {
        let n = self.task.val_y.len() as f64;
        0.5 * (&self.task.val_x * beta - &self.task.val_y).norm_squared() / n
    }

    fn g_value(&self, lambda: &Vector, beta: &Vector) -> f64 {
        0.5 * (&self.task.train_x * beta - &self.task.train_y).norm_squared()
            + 0.5 * self.gamma * (lambda - beta).norm_squared()
    }

    fn grad_f_lambda(&self, lambda: &Vector, _beta: &Vector) -> Vector {
        Vector::zeros(lambda.len())
    }

    fn grad_f_beta(&self, _lambda: &Vector, beta: &Vector) -> Vector {
        let n = self.task.val_y.len() as f64;
        self.task.val_x.transpose() * (&self.task.val_x * beta - &self.task.val_y) / n
    }

    fn grad_g_beta(&self, lambda: &Vector, beta: &Vector) -> Vector {
        &self.task.gram * beta - &self.task.moment + (beta - lambda) * self.gamma
    }

    fn hvp_g_lambda_beta(&self, _lambda: &Vector, _beta: &Vector, v: &Vector) -> Vector {
        -v * self.gamma
    }

    fn hvp_g_beta_beta(&self, _lambda: &Vector, _beta: &Vector, v: &Vector) -> Vector {
        &self.task.gram * v + v * self.gamma
    }
}

impl StochasticInstant for MetaToyInstant {
    fn noise(&self) -> NoiseLevels {
        self.noise
    }

    fn grad_g_beta_sampled(&self, lambda: &Vector, beta: &Vector, batch: usize, rng: &mut dyn RngCore) -> Vector {
        let exact = self.grad_g_beta(lambda, beta);
        let sigma = self.noise.sigma_g_beta;
        if sigma == 0.0 {
            return exact;
        }
        let batch = batch.max(1);
        let mut acc = Vector::zeros(exact.len());
        for _ in 0..batch {
            acc += &exact + isotropic_noise(exact.len(), sigma, rng);
        }
        acc / batch as f64
    }

    fn grad_f_sampled(&self, lambda: &Vector, beta: &Vector, rng: &mut dyn RngCore) -> (Vector, Vector) {
        let grad_beta = self.grad_f_beta(lambda, beta);
        let sigma = self.noise.sigma_f;
        let grad_beta = if sigma == 0.0 {
            grad_beta
        } else {
            &grad_beta + isotropic_noise(grad_beta.len(), sigma, rng)
        };
        (self.grad_f_lambda(lambda, beta), grad_beta)
    }

    fn hvp_g_lambda_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_lambda_beta(lambda, beta, v)
    }

    fn hvp_g_beta_beta_sampled(&self, lambda: &Vector, beta: &Vector, v: &Vector, _rng: &mut dyn RngCore) -> Vector {
        self.hvp_g_beta_beta(lambda, beta, v)
    }
}

impl ExactOracle for MetaToyInstant {
    fn inner_opt(&self, lambda: &Vector) -> Result<Vector> {
        let rhs = &self.task.moment + lambda * self.gamma;
        let chol = self
            .inner_matrix()
            .cholesky()
            .ok_or(Error::Singular("meta inner system"))?;
        Ok(chol.solve(&rhs))
    }
}

/// Meta-learning stream with default task options.
pub fn meta_toy_stream(config: &StreamConfig, gamma: f64) -> Result<Vec<MetaToyInstant>> {
    meta_toy_stream_with(config, gamma, MetaToyOptions::default())
}

/// Meta-learning stream. Feature columns are scaled geometrically and
/// training rows by `1/√n_train`, so the training Gram matrix has spectrum
/// roughly `[1, kappa_target]`; the task centre follows `config.drift`.
pub fn meta_toy_stream_with(config: &StreamConfig, gamma: f64, options: MetaToyOptions) -> Result<Vec<MetaToyInstant>> {
    config.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if config.d1 != config.d2 {
        return Err(invalid("meta-learning stream needs d1 = d2"));
    }
    if options.n_train == 0 || options.n_val == 0 {
        return Err(invalid("meta-learning tasks need training and validation samples"));
    }
    let d = config.d1;
    let mut rng = substream(config.seed, streams::GENERATOR);
    let column_scale: Vec<f64> = (0..d)
        .map(|j| {
            let frac = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
            config.kappa_target.powf(0.5 * frac)
        })
        .collect();
    let features = |n: usize, row_scale: f64, rng: &mut dyn RngCore| {
        Matrix::from_fn(n, d, |_, j| -> f64 {
            let z: f64 = StandardNormal.sample(&mut *rng);
            z * column_scale[j] * row_scale
        })
    };
    let start = isotropic_noise(d, (d as f64).sqrt(), &mut rng);
    let centres = DriftPath::generate(start, config.drift, config.drift_scale, config.horizon, &mut rng);

    let make_task = |centre: &Vector, rng: &mut dyn RngCore| -> Result<Arc<TaskData>> {
        let w = centre + isotropic_noise(d, options.task_spread * (d as f64).sqrt(), rng);
        let train_x = features(options.n_train, 1.0 / (options.n_train as f64).sqrt(), rng);
        let val_x = features(options.n_val, 1.0, rng);
        let label = |x: &Matrix, rng: &mut dyn RngCore| -> Vector {
            let clean = x * &w;
            let noise = isotropic_noise(clean.len(), options.label_noise * (clean.len() as f64).sqrt(), rng);
            clean + noise
        };
        let train_y = label(&train_x, rng);
        let val_y = label(&val_x, rng);
        let gram = train_x.transpose() * &train_x;
        let moment = train_x.transpose() * &train_y;
        let (lo, hi) = sym_eig_range(&gram);
        let (_, val_hi) = sym_eig_range(&(val_x.transpose() * &val_x));
        let constants = ProblemConstants {
            mu_g: lo.max(0.0) + gamma,
            l_g1: hi.max(0.0) + gamma,
            l_g2: 0.0,
            l_f0: f64::INFINITY,
            l_f1: (val_hi / options.n_val as f64).max(f64::MIN_POSITIVE),
        };
        constants.validate()?;
        Ok(Arc::new(TaskData {
            train_x,
            train_y,
            val_x,
            val_y,
            gram,
            moment,
            constants,
        }))
    };

    let mut out = Vec::with_capacity(config.horizon);
    let mut first: Option<Arc<TaskData>> = None;
    for (i, centre) in centres.points.iter().enumerate() {
        let task = match (&first, options.repeat_task) {
            (Some(task), true) => Arc::clone(task),
            _ => make_task(centre, &mut rng)?,
        };
        if first.is_none() {
            first = Some(Arc::clone(&task));
        }
        out.push(MetaToyInstant {
            t: i + 1,
            gamma,
            noise: config.noise,
            task,
        });
    }
    Ok(out)
}
