//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use obbo_core::geometry::{generalized_projection, prox_step, DistanceGenerator, FeasibleSet, Regularizer};
use obbo_core::hypergrad::{
    exact_hypergradient, implicit_hypergradient, inner_gd, itd_hypergradient, stochastic_hypergradient, NeumannParams,
};
use obbo_core::metrics::{function_variation, path_variation, regret_series, RegretSetup, SampleGrid};
use obbo_core::optimizers::{
    run_oagd, run_obbo, run_obbo_with_seed, run_sobbo, run_sobow, Estimator, InnerSolver, ObboConfig, PhiMode,
    RunTrace, SobboConfig,
};
use obbo_core::problems::{
    quadratic_stream, spline_stream, BilevelInstant, Coupling, Drift, ExactOracle, NoiseLevels, OuterShape,
    QuadraticInstant, QuadraticParts, SplineStreamConfig, StreamConfig,
};
use obbo_core::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    Vector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Fourth-order central difference of a scalar function.
fn fd_gradient(x: &Vector, h: f64, f: impl Fn(&Vector) -> f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let at = |s: f64| {
            let mut y = x.clone();
            y[i] += s * h;
            f(&y)
        };
        (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
    })
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_stream_config(rng: &mut ChaCha8Rng, horizon: usize) -> StreamConfig {
    let mut cfg = StreamConfig::new(rng.random_range(1..=8), rng.random_range(1..=8), horizon);
    cfg.kappa_target = rng.random_range(1.0..50.0);
    cfg.mu_g = rng.random_range(0.2..2.0);
    cfg.drift = Drift::Sublinear { rate: 0.5 };
    cfg.seed = rng.random();
    cfg.coupling = if rng.random_bool(0.5) {
        Coupling::Aligned
    } else {
        Coupling::Random
    };
    cfg.outer.cos_amplitude = rng.random_range(0.0..0.5);
    cfg.outer.cos_frequency = rng.random_range(0.5..2.0);
    cfg
}

fn hypergradient_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_itd, mut worst_exact) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let cfg = random_stream_config(&mut rng, 5);
        let stream = quadratic_stream(&cfg).map_err(err)?;
        let inst = &stream[rng.random_range(0..stream.len())];
        let lambda = gaussian(&mut rng, cfg.d1, 1.0);
        let beta0 = gaussian(&mut rng, cfg.d2, 1.0);
        let eta = rng.random_range(0.2..1.0) / inst.constants().l_g1;
        let k = rng.random_range(1..=20);

        let solve = inner_gd(inst, &lambda, &beta0, eta, k).map_err(err)?;
        let itd = itd_hypergradient(inst, &lambda, &solve).map_err(err)?;
        let unrolled = |l: &Vector| {
            let s = inner_gd(inst, l, &beta0, eta, k).unwrap();
            inst.f_value(l, s.last())
        };
        worst_itd = worst_itd.max(rel_err(&itd, &fd_gradient(&lambda, 1e-3, unrolled)));

        let exact = exact_hypergradient(inst, &lambda).map_err(err)?;
        let fd = fd_gradient(&lambda, 1e-3, |l| inst.outer_value(l).unwrap());
        worst_exact = worst_exact.max(rel_err(&exact, &fd));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_itd <= 1e-6 && worst_exact <= 1e-6 && secs < 10.0,
        format!("max rel err ITD {worst_itd:.2e}, exact {worst_exact:.2e}; {secs:.2} s"),
    )
}

fn itd_decay() -> Outcome {
    let mut cfg = StreamConfig::new(3, 5, 1);
    cfg.kappa_target = 10.0;
    cfg.seed = 5;
    let stream = quadratic_stream(&cfg).map_err(err)?;
    let inst = &stream[0];
    let c = inst.constants();
    let eta = 1.0 / (2.0 * c.l_g1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lambda = gaussian(&mut rng, cfg.d1, 1.0);
    let beta0 = gaussian(&mut rng, cfg.d2, 3.0);
    let exact = exact_hypergradient(inst, &lambda).map_err(err)?;
    let floor = 1e-13 * exact.norm().max(1.0);
    let (mut ks, mut logs) = (Vec::new(), Vec::new());
    for k in (20..=400).step_by(20) {
        let solve = inner_gd(inst, &lambda, &beta0, eta, k).map_err(err)?;
        let e = (itd_hypergradient(inst, &lambda, &solve).map_err(err)? - &exact).norm();
        if e > floor {
            ks.push(k as f64);
            logs.push(e.ln());
        }
    }
    if ks.len() < 3 {
        return Err(format!("only {} points above the precision floor", ks.len()));
    }
    let slope = least_squares_slope(&ks, &logs);
    let rate = 1.0 - eta * c.mu_g;
    let target = rate.sqrt().ln();
    check(
        (slope - target).abs() <= 0.05,
        format!(
            "slope {slope:.4} vs log sqrt(1-eta mu) {target:.4} (log(1-eta mu) = {:.4}), {} points",
            rate.ln(),
            ks.len()
        ),
    )
}

fn inner_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut cfg = StreamConfig::new(rng.random_range(1..=6), rng.random_range(1..=8), 1);
        cfg.kappa_target = rng.random_range(1.0..100.0);
        cfg.mu_g = rng.random_range(0.1..3.0);
        cfg.seed = rng.random();
        let inst = &quadratic_stream(&cfg).map_err(err)?[0];
        let c = inst.constants();
        let eta = rng.random_range(0.05..=1.0) / c.l_g1;
        let lambda = gaussian(&mut rng, cfg.d1, 1.0);
        let beta_hat = inst.inner_opt(&lambda).map_err(err)?;
        let beta0 = &beta_hat + gaussian(&mut rng, cfg.d2, 5.0);
        let solve = inner_gd(inst, &lambda, &beta0, eta, 60).map_err(err)?;
        let errs: Vec<f64> = solve
            .trajectory
            .iter()
            .map(|w| (w - &beta_hat).norm_squared())
            .collect();
        let bound = 1.0 - eta * c.mu_g;
        for pair in errs.windows(2) {
            if pair[0] < 1e-18 * errs[0] {
                break;
            }
            worst = worst.max(pair[1] / pair[0] - bound);
        }
    }
    check(worst <= 1e-12, format!("max ratio minus (1 - eta mu) = {worst:.3e}"))
}

fn neumann_bias() -> Outcome {
    let start = Instant::now();
    let (d1, d2) = (2, 2);
    let q = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 10.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Matrix::from_fn(d2, d1, |i, j| if i == j { 1.0 } else { 0.3 });
    let inst = QuadraticInstant::from_parts(QuadraticParts {
        t: 1,
        q,
        a,
        b: gaussian(&mut rng, d2, 1.0),
        c: Vector::from_vec(vec![2.0, -1.0]),
        outer: OuterShape::default(),
        offset: 0.0,
        noise: NoiseLevels::default(),
    })
    .map_err(err)?;
    let c = inst.constants();
    let lambda = gaussian(&mut rng, d1, 1.0);
    let beta = inst.inner_opt(&lambda).map_err(err)?;
    let truth = implicit_hypergradient(&inst, &lambda, &beta).map_err(err)?;
    let draws = 100_000;
    let (mut ms, mut logs) = (Vec::new(), Vec::new());
    for m in 1..=20 {
        let mut sum = Vector::zeros(d1);
        for _ in 0..draws {
            sum += stochastic_hypergradient(&inst, &lambda, &beta, NeumannParams { m, l_g1: c.l_g1 }, &mut rng)
                .map_err(err)?;
        }
        let bias = (sum / draws as f64 - &truth).norm();
        ms.push(m as f64);
        logs.push(bias.ln());
    }
    let ratio = least_squares_slope(&ms, &logs).exp();
    let expected = 1.0 - c.mu_g / c.l_g1;
    let secs = start.elapsed().as_secs_f64();
    check(
        (ratio - expected).abs() <= 0.1 * expected && secs < 60.0,
        format!("bias ratio per m {ratio:.4} vs {expected:.4}; {secs:.1} s"),
    )
}

struct ProxCase {
    phi: DistanceGenerator,
    h: Regularizer,
    set: FeasibleSet,
    u: Vector,
    alpha: f64,
}

fn random_prox_case(rng: &mut ChaCha8Rng, dim: usize) -> ProxCase {
    let phi = if rng.random_bool(0.3) {
        DistanceGenerator::euclidean(dim)
    } else {
        DistanceGenerator::diagonal(Vector::from_fn(dim, |_, _| rng.random_range(0.2..5.0))).unwrap()
    };
    let h = if rng.random_bool(0.5) {
        Regularizer::Zero
    } else {
        Regularizer::L1 {
            weight: rng.random_range(0.0..2.0),
        }
    };
    let set = if rng.random_bool(0.5) {
        FeasibleSet::FullSpace
    } else {
        FeasibleSet::cube(dim, rng.random_range(0.2..1.0)).unwrap()
    };
    let u = set.project(&gaussian(rng, dim, 0.5));
    ProxCase {
        phi,
        h,
        set,
        u,
        alpha: rng.random_range(0.05..1.0),
    }
}

fn prox_objective(c: &ProxCase, q: &Vector, x: &Vector) -> f64 {
    let mut breg = 0.0;
    for i in 0..x.len() {
        let d = x[i] - c.u[i];
        breg += 0.5 * c.phi.weight(i) * d * d;
    }
    q.dot(x) + c.h.value(x) + breg / c.alpha
}

fn grid_argmin(c: &ProxCase, q: &Vector, lower: &[f64], upper: &[f64], n: usize) -> Vector {
    let dim = lower.len();
    let step: Vec<f64> = (0..dim).map(|i| (upper[i] - lower[i]) / (n - 1) as f64).collect();
    let mut best = (f64::INFINITY, Vector::zeros(dim));
    let mut idx = vec![0usize; dim];
    loop {
        let x = Vector::from_fn(dim, |i, _| lower[i] + step[i] * idx[i] as f64);
        let v = prox_objective(c, q, &x);
        if v < best.0 {
            best = (v, x);
        }
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            return best.1;
        }
    }
}

fn prox_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_b5 = f64::NEG_INFINITY;
    let mut worst_b6 = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let dim = rng.random_range(1..=6);
        let c = random_prox_case(&mut rng, dim);
        let rho = c.phi.rho();
        let q = gaussian(&mut rng, dim, 2.0);
        let g = generalized_projection(&c.u, &q, c.alpha, &c.phi, &c.h, &c.set).map_err(err)?;
        let next = prox_step(&q, &c.u, c.alpha, &c.phi, &c.h, &c.set).map_err(err)?;
        let lhs = q.dot(&g);
        let rhs = rho * g.norm_squared() + (c.h.value(&next) - c.h.value(&c.u)) / c.alpha;
        worst_b5 = worst_b5.max((rhs - lhs) / (1.0 + lhs.abs()));
    }
    for _ in 0..10_000 {
        let dim = rng.random_range(1..=6);
        let c = random_prox_case(&mut rng, dim);
        let q1 = gaussian(&mut rng, dim, 2.0);
        let q2 = gaussian(&mut rng, dim, 2.0);
        let g1 = generalized_projection(&c.u, &q1, c.alpha, &c.phi, &c.h, &c.set).map_err(err)?;
        let g2 = generalized_projection(&c.u, &q2, c.alpha, &c.phi, &c.h, &c.set).map_err(err)?;
        let bound = (&q1 - &q2).norm() / c.phi.rho();
        worst_b6 = worst_b6.max(((&g1 - &g2).norm() - bound) / (1.0 + bound));
    }
    let mut worst_grid = 0.0f64;
    let n = 161;
    for _ in 0..24 {
        let dim = rng.random_range(1..=3);
        let c = random_prox_case(&mut rng, dim);
        let q = gaussian(&mut rng, dim, 1.0);
        let got = prox_step(&q, &c.u, c.alpha, &c.phi, &c.h, &c.set).map_err(err)?;
        let (lower, upper) = match c.set.bounds() {
            Some((l, u)) => (l.to_vec(), u.to_vec()),
            None => (
                (0..dim).map(|i| got[i].min(c.u[i]) - 1.0).collect(),
                (0..dim).map(|i| got[i].max(c.u[i]) + 1.0).collect(),
            ),
        };
        let grid = grid_argmin(&c, &q, &lower, &upper, n);
        for i in 0..dim {
            let res = (upper[i] - lower[i]) / (n - 1) as f64;
            worst_grid = worst_grid.max((got[i] - grid[i]).abs() / res);
        }
    }
    check(
        worst_b5 <= 1e-12 && worst_b6 <= 1e-12 && worst_grid <= 2.0,
        format!(
            "inner-product bound slack {worst_b5:.2e}, Lipschitz slack {worst_b6:.2e}, grid distance {worst_grid:.2} cells"
        ),
    )
}

fn regret_sublinearity() -> Outcome {
    let start = Instant::now();
    let mut cfg = StreamConfig::new(4, 6, 2000);
    cfg.kappa_target = 5.0;
    cfg.drift = Drift::Sublinear { rate: 0.5 };
    cfg.seed = 6;
    let stream = quadratic_stream(&cfg).map_err(err)?;
    let opt = ObboConfig {
        window: 10,
        inner_steps: 80,
        ..ObboConfig::default()
    };
    let trace = run_obbo(&stream, &opt).map_err(err)?;
    let setup = RegretSetup {
        alpha: trace.params.alpha,
        window: 10,
        regularizer: Regularizer::Zero,
        feasible: FeasibleSet::FullSpace,
    };
    let series = regret_series(&stream, &trace, &setup).map_err(err)?;
    let avg = |t: usize| series.cumulative[t - 1] / t as f64;
    let (r500, r2000) = (avg(500), avg(2000));

    let visited: Vec<Vector> = trace.lambdas().cloned().collect();
    let grid = SampleGrid::for_set(&FeasibleSet::FullSpace, cfg.d1, &visited, 64).map_err(err)?;
    let per_round = |t: usize| -> Result<(f64, f64), String> {
        let h = path_variation(&stream[..t], 2.0, &grid.points).map_err(err)?;
        let v = function_variation(&stream[..t], &grid.points).map_err(err)?;
        Ok((h / t as f64, v / t as f64))
    };
    let (h500, v500) = per_round(500)?;
    let (h1000, v1000) = per_round(1000)?;
    let (h2000, v2000) = per_round(2000)?;
    let variation_sublinear = h2000 < h1000 && h1000 < h500 && v2000 < v1000 && v1000 < v500;
    let secs = start.elapsed().as_secs_f64();
    check(
        r2000 < 0.5 * r500 && variation_sublinear && secs < 300.0,
        format!(
            "BLR/T {r500:.3e} at 500, {r2000:.3e} at 2000; H2/T {h500:.2e}->{h2000:.2e}, V1/T {v500:.2e}->{v2000:.2e}; {secs:.1} s"
        ),
    )
}

fn euclidean_blr<I: ExactOracle>(stream: &[I], trace: &RunTrace) -> Result<f64, String> {
    let setup = RegretSetup {
        alpha: trace.params.alpha,
        window: trace.params.window,
        regularizer: Regularizer::Zero,
        feasible: FeasibleSet::FullSpace,
    };
    let s = regret_series(stream, trace, &setup).map_err(err)?;
    Ok(*s.euclidean_cumulative.last().unwrap())
}

fn adaptive_geometry() -> Outcome {
    let (mut adaptive, mut euclid) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let mut cfg = StreamConfig::new(8, 8, 2000);
        cfg.kappa_target = 100.0;
        cfg.drift = Drift::Sublinear { rate: 0.5 };
        cfg.seed = seed;
        let stream = quadratic_stream(&cfg).map_err(err)?;
        let base = ObboConfig {
            window: 10,
            inner_steps: 20,
            clip_threshold: Some(1000.0),
            ..ObboConfig::default()
        };
        let ada = ObboConfig {
            phi: PhiMode::adaptive(),
            ..base.clone()
        };
        adaptive.push(euclidean_blr(
            &stream,
            &run_obbo_with_seed(&stream, &ada, seed).map_err(err)?,
        )?);
        euclid.push(euclidean_blr(&stream, &run_sobow(&stream, &base, seed).map_err(err)?)?);
    }
    let (a, e) = (median(&adaptive), median(&euclid));
    check(
        a < e,
        format!("median cumulative Euclidean BLR: adaptive {a:.4e}, Euclidean {e:.4e}"),
    )
}

fn window_variance() -> Outcome {
    let mut cfg = StreamConfig::new(8, 8, 60);
    cfg.kappa_target = 2.0;
    cfg.seed = 8;
    cfg.noise = NoiseLevels {
        sigma_g_beta: 0.01,
        sigma_f: 1.0,
    };
    let stream = quadratic_stream(&cfg).map_err(err)?;
    let t_fixed = 50;
    let variance = |w: usize| -> Result<f64, String> {
        let sobbo = SobboConfig {
            obbo: ObboConfig {
                window: w,
                inner_steps: 10,
                alpha: Some(1e-3),
                ..ObboConfig::default()
            },
            batch_size: Some(4),
            neumann_m: Some(4),
        };
        let samples: Vec<Vector> = (0..100)
            .map(|seed| run_sobbo(&stream, &sobbo, seed).map(|tr| tr.steps[t_fixed - 1].smoothed.clone()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let mean = samples.iter().fold(Vector::zeros(cfg.d1), |acc, s| acc + s) / samples.len() as f64;
        Ok(samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / (samples.len() - 1) as f64)
    };
    let ratio = variance(1)? / variance(16)?;
    check(
        (12.0..=20.0).contains(&ratio),
        format!("variance ratio w=1 / w=16: {ratio:.2}"),
    )
}

fn reduction_identities() -> Outcome {
    let mut cfg = StreamConfig::new(3, 4, 200);
    cfg.kappa_target = 4.0;
    cfg.drift = Drift::Sublinear { rate: 0.5 };
    cfg.seed = 9;
    let stream = quadratic_stream(&cfg).map_err(err)?;
    let opt = ObboConfig {
        window: 5,
        inner_steps: 10,
        ..ObboConfig::default()
    };
    let obbo = run_obbo(&stream, &opt).map_err(err)?;
    let sobow = run_sobow(&stream, &opt, 0).map_err(err)?;
    let same_runs = obbo.steps == sobow.steps && obbo.final_lambda == sobow.final_lambda;

    let single = ObboConfig {
        window: 1,
        inner_steps: 1,
        eta: Some(0.1),
        ..ObboConfig::default()
    };
    let a = run_oagd(&stream, &single, 0).map_err(err)?;
    let b = run_obbo(&stream, &single).map_err(err)?;
    let same_oagd = a.steps == b.steps;

    let setup = RegretSetup {
        alpha: obbo.params.alpha,
        window: 5,
        regularizer: Regularizer::Zero,
        feasible: FeasibleSet::FullSpace,
    };
    let s = regret_series(&stream, &obbo, &setup).map_err(err)?;
    let worst = s
        .terms
        .iter()
        .zip(&s.euclidean_terms)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
        .fold(0.0f64, f64::max);
    check(
        same_runs && same_oagd && worst <= 1e-12,
        format!(
            "OBBO = SOBOW: {same_runs}; OAGD(w=1) = OBBO(w=1): {same_oagd}; max regret-series rel diff {worst:.1e}"
        ),
    )
}

fn spline_end_to_end() -> Outcome {
    let mut worst_fd = 0.0f64;
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in 0..3 {
        let task = SplineStreamConfig {
            seed,
            ..SplineStreamConfig::new(1000)
        }
        .generate()
        .map_err(err)?;
        let stream = spline_stream(&task).map_err(err)?;
        for t in [0, 500, 999] {
            for lam in [1e-3, 0.1, 3.0] {
                let l = Vector::from_vec(vec![lam]);
                let closed = stream[t].closed_form_hypergradient(&l).map_err(err)?;
                let fd = fd_gradient(&l, lam * 1e-3, |x| stream[t].validation_mse(x[0]).unwrap());
                worst_fd = worst_fd.max(rel_err(&closed, &fd));
            }
        }

        let opt = ObboConfig {
            window: 10,
            estimator: Estimator::Implicit,
            inner_solver: InnerSolver::Newton,
            phi: PhiMode::adaptive(),
            alpha: Some(1e-2),
            feasible: task.lambda_domain().map_err(err)?,
            lambda0: Some(vec![1.0]),
            clip_threshold: Some(1000.0),
            ..ObboConfig::default()
        };
        let trace = run_obbo(&stream, &opt).map_err(err)?;
        let tail = stream.len() / 10;
        let start = stream.len() - tail;
        let tuned = (start..stream.len())
            .map(|t| stream[t].validation_mse(trace.steps[t].lambda[0]))
            .sum::<Result<f64, _>>()
            .map_err(err)?
            / tail as f64;
        let (lo, hi) = (task.lambda_lower.ln(), task.lambda_upper.ln());
        let mut best_fixed = f64::INFINITY;
        for i in 0..5 {
            let lam = (lo + (hi - lo) * i as f64 / 4.0).exp();
            let v = (start..stream.len())
                .map(|t| stream[t].validation_mse(lam))
                .sum::<Result<f64, _>>()
                .map_err(err)?
                / tail as f64;
            best_fixed = best_fixed.min(v);
        }
        if tuned < best_fixed {
            wins += 1;
        }
        lines.push(format!("seed {seed}: tuned {tuned:.4e} vs fixed {best_fixed:.4e}"));
    }
    check(
        worst_fd <= 1e-6 && wins == 3,
        format!("closed-form vs FD max rel err {worst_fd:.2e}; {}", lines.join("; ")),
    )
}

fn cli_determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let dir = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_obbo"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&dir)
            .output()
            .map_err(err)?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
            .map_err(err)?
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let n = outputs[0].len();
    check(
        n > 0 && outputs[0] == outputs[1],
        format!("{n} CSV files compared byte-for-byte"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("1 hypergradient exactness", hypergradient_exactness),
        ("2 ITD geometric decay", itd_decay),
        ("3 inner GD contraction", inner_contraction),
        ("4 stochastic bias decay", neumann_bias),
        ("5 prox/projection contracts", prox_contracts),
        ("6 regret sublinearity", regret_sublinearity),
        ("7 adaptive-geometry benefit", adaptive_geometry),
        ("8 window variance reduction", window_variance),
        ("9 reduction identities", reduction_identities),
        ("10 spline end-to-end", spline_end_to_end),
        ("11 CLI determinism", cli_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({secs:.1} s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
