use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, check_dim, check_finite, solve_spd, Vector};
use crate::problems::{BilevelInstant, StochasticInstant};

/// Iterates `ω⁰, …, ω^K` of an inner solve together with the step size and
/// the λ they were computed at.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolveResult {
    pub trajectory: Vec<Vector>,
    pub eta: f64,
    pub k: usize,
    pub lambda: Vector,
}

impl InnerSolveResult {
    /// `ω^K`.
    pub fn last(&self) -> &Vector {
        self.trajectory
            .last()
            .expect("trajectory holds at least the warm start")
    }
}

fn check_inputs<I: BilevelInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta0: &Vector,
    eta: f64,
    k: usize,
) -> Result<()> {
    check_dim("inner solve lambda", lambda, instant.lambda_dim())?;
    check_dim("inner solve warm start", beta0, instant.beta_dim())?;
    check_finite("inner solve lambda", lambda)?;
    check_finite("inner solve warm start", beta0)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("inner step size must be positive, got {eta}")));
    }
    if k == 0 {
        return Err(invalid("inner iteration count must be at least 1"));
    }
    Ok(())
}

fn run(
    lambda: &Vector,
    beta0: &Vector,
    eta: f64,
    k: usize,
    mut grad: impl FnMut(&Vector) -> Vector,
) -> Result<InnerSolveResult> {
    let mut trajectory = Vec::with_capacity(k + 1);
    trajectory.push(beta0.clone());
    for _ in 0..k {
        let prev = trajectory.last().expect("nonempty");
        let next = prev - grad(prev) * eta;
        if !all_finite(&next) {
            return Err(Error::NonFinite("inner iterate (step size too large?)"));
        }
        trajectory.push(next);
    }
    Ok(InnerSolveResult {
        trajectory,
        eta,
        k,
        lambda: lambda.clone(),
    })
}

/// `K` steps of gradient descent on `g_t(λ, ·)` from `beta0`.
pub fn inner_gd<I: BilevelInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta0: &Vector,
    eta: f64,
    k: usize,
) -> Result<InnerSolveResult> {
    check_inputs(instant, lambda, beta0, eta, k)?;
    run(lambda, beta0, eta, k, |w| instant.grad_g_beta(lambda, w))
}

/// `K` Newton steps `ω ← ω − (∇²_{ββ} g_t)⁻¹ ∇_β g_t` from `beta0`, built
/// from gradient and Hessian-vector oracles only. One step is exact when
/// `g_t` is quadratic in `β`. The recorded step size is 1.
pub fn inner_newton<I: BilevelInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta0: &Vector,
    k: usize,
) -> Result<InnerSolveResult> {
    check_inputs(instant, lambda, beta0, 1.0, k)?;
    let mut trajectory = Vec::with_capacity(k + 1);
    trajectory.push(beta0.clone());
    for _ in 0..k {
        let prev = trajectory.last().expect("nonempty");
        let hessian = instant.beta_hessian(lambda, prev);
        let step = solve_spd(&hessian, &instant.grad_g_beta(lambda, prev), "inner Hessian")?;
        let next = prev - step;
        if !all_finite(&next) {
            return Err(Error::NonFinite("inner Newton iterate"));
        }
        trajectory.push(next);
    }
    Ok(InnerSolveResult {
        trajectory,
        eta: 1.0,
        k,
        lambda: lambda.clone(),
    })
}

/// `K` steps of minibatch SGD with `batch` samples per step.
pub fn inner_sgd<I: StochasticInstant + ?Sized>(
    instant: &I,
    lambda: &Vector,
    beta0: &Vector,
    eta: f64,
    k: usize,
    batch: usize,
    rng: &mut dyn RngCore,
) -> Result<InnerSolveResult> {
    check_inputs(instant, lambda, beta0, eta, k)?;
    if batch == 0 {
        return Err(invalid("inner batch size must be at least 1"));
    }
    run(lambda, beta0, eta, k, |w| {
        instant.grad_g_beta_sampled(lambda, w, batch, rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::problems::{
        quadratic_stream, ExactOracle, NoiseLevels, OuterShape, QuadraticInstant, QuadraticParts, StreamConfig,
    };
    use crate::rng::substream;

    fn one_d() -> QuadraticInstant {
        QuadraticInstant::from_parts(QuadraticParts {
            t: 1,
            q: Matrix::from_element(1, 1, 1.0),
            a: Matrix::from_element(1, 1, 2.0),
            b: Vector::zeros(1),
            c: Vector::zeros(1),
            outer: OuterShape::default(),
            offset: 0.0,
            noise: NoiseLevels::default(),
        })
        .unwrap()
    }

    #[test]
    fn newton_step_is_exact_on_quadratics() {
        let cfg = StreamConfig {
            kappa_target: 50.0,
            ..StreamConfig::new(3, 5, 1)
        };
        let inst = &quadratic_stream(&cfg).unwrap()[0];
        let lam = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let r = inner_newton(inst, &lam, &Vector::from_element(5, 10.0), 1).unwrap();
        let star = inst.inner_opt(&lam).unwrap();
        assert!((r.last() - &star).norm() <= 1e-10 * (1.0 + star.norm()));
        assert_eq!(r.eta, 1.0);
    }

    #[test]
    fn single_step_example() {
        let r = inner_gd(&one_d(), &Vector::from_element(1, 1.0), &Vector::zeros(1), 0.5, 1).unwrap();
        assert_eq!(r.trajectory.len(), 2);
        assert_eq!(r.trajectory[0][0], 0.0);
        assert_eq!(r.last()[0], 1.0);
    }

    #[test]
    fn fixed_point_start_stays_put() {
        let inst = one_d();
        let lam = Vector::from_element(1, 0.7);
        let star = inst.inner_opt(&lam).unwrap();
        let r = inner_gd(&inst, &lam, &star, 0.3, 10).unwrap();
        assert!(r.trajectory.iter().all(|w| w == &star));
    }

    #[test]
    fn gd_contracts_at_declared_rate() {
        let stream = quadratic_stream(&StreamConfig {
            kappa_target: 8.0,
            seed: 4,
            ..StreamConfig::new(3, 5, 3)
        })
        .unwrap();
        let inst = &stream[1];
        let c = inst.constants();
        let eta = 0.9 / c.l_g1;
        let lam = Vector::from_vec(vec![0.5, -0.3, 1.0]);
        let star = inst.inner_opt(&lam).unwrap();
        let r = inner_gd(inst, &lam, &Vector::from_element(5, 3.0), eta, 30).unwrap();
        for pair in r.trajectory.windows(2) {
            let before = (&pair[0] - &star).norm_squared();
            let after = (&pair[1] - &star).norm_squared();
            assert!(after <= (1.0 - eta * c.mu_g) * before * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn zero_noise_sgd_matches_gd() {
        let stream = quadratic_stream(&StreamConfig::new(2, 3, 2)).unwrap();
        let lam = Vector::from_vec(vec![0.5, -0.3]);
        let b0 = Vector::zeros(3);
        let gd = inner_gd(&stream[0], &lam, &b0, 0.4, 7).unwrap();
        let mut rng = substream(1, 1);
        let sgd = inner_sgd(&stream[0], &lam, &b0, 0.4, 7, 4, &mut rng).unwrap();
        assert_eq!(gd, sgd);
    }

    #[test]
    fn divergence_and_bad_parameters_are_errors() {
        let inst = one_d();
        let lam = Vector::from_element(1, 1.0);
        let b0 = Vector::zeros(1);
        assert!(matches!(
            inner_gd(&inst, &lam, &b0, 3.0, 5000),
            Err(Error::NonFinite(_))
        ));
        assert!(inner_gd(&inst, &lam, &b0, 0.0, 1).is_err());
        assert!(inner_gd(&inst, &lam, &b0, 0.1, 0).is_err());
        assert!(inner_gd(&inst, &lam, &Vector::zeros(2), 0.1, 1).is_err());
    }
}
