use crate::error::{invalid, Result};
use crate::geometry::FeasibleSet;
use crate::linalg::Vector;
use crate::problems::ExactOracle;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base as u64) as f64 * inv;
        index /= base as u64;
        inv /= b;
    }
    out
}

/// Deterministic points standing in for the supremum over λ. A grid of `n`
/// points is a prefix of every larger grid over the same box, so suprema
/// estimated on it never exceed those of a refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub points: Vec<Vector>,
}

impl SampleGrid {
    /// Box corners (when there are at most `n` of them) followed by a Halton
    /// sequence filling `[lower, upper]`.
    pub fn halton(lower: &[f64], upper: &[f64], n: usize) -> Result<Self> {
        let dim = lower.len();
        if upper.len() != dim || dim == 0 {
            return Err(invalid("grid bounds must share a positive dimension"));
        }
        if dim > PRIMES.len() {
            return Err(invalid(format!(
                "Halton grid supports at most {} dimensions",
                PRIMES.len()
            )));
        }
        if lower
            .iter()
            .zip(upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(invalid("grid bounds must be finite with lower <= upper"));
        }
        let mut points = Vec::with_capacity(n);
        let corners = 1usize.checked_shl(dim as u32).filter(|&c| c <= n).unwrap_or(0);
        for mask in 0..corners {
            points.push(Vector::from_fn(dim, |i, _| {
                if mask >> i & 1 == 1 {
                    upper[i]
                } else {
                    lower[i]
                }
            }));
        }
        let mut index = 1u64;
        while points.len() < n {
            points.push(Vector::from_fn(dim, |i, _| {
                lower[i] + (upper[i] - lower[i]) * radical_inverse(index, PRIMES[i])
            }));
            index += 1;
        }
        Ok(Self { points })
    }

    /// Grid over the feasible box, or over the bounding box of `visited`
    /// padded by one unit when λ is unconstrained; the visited points are
    /// appended.
    pub fn for_set(set: &FeasibleSet, dim: usize, visited: &[Vector], n: usize) -> Result<Self> {
        let (lower, upper) = match set.bounds() {
            Some((l, u)) => (l.to_vec(), u.to_vec()),
            None => {
                let mut lower = vec![-1.0f64; dim];
                let mut upper = vec![1.0f64; dim];
                for v in visited {
                    for i in 0..dim {
                        lower[i] = lower[i].min(v[i] - 1.0);
                        upper[i] = upper[i].max(v[i] + 1.0);
                    }
                }
                (lower, upper)
            }
        };
        let mut grid = Self::halton(&lower, &upper, n)?;
        grid.points.extend(visited.iter().cloned());
        Ok(grid)
    }
}

/// Inner path variation and function variation of a stream over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationReport {
    pub h1: f64,
    pub h2: f64,
    pub v1: f64,
    pub grid_size: usize,
}

fn check_grid(points: &[Vector]) -> Result<()> {
    if points.is_empty() {
        return Err(invalid("variation grid is empty"));
    }
    Ok(())
}

/// `Σ_{t=2}^T max_λ ‖β̂_{t−1}(λ) − β̂_t(λ)‖^p` with the max over `points`.
pub fn path_variation<I: ExactOracle>(stream: &[I], p: f64, points: &[Vector]) -> Result<f64> {
    check_grid(points)?;
    let mut prev: Option<Vec<Vector>> = None;
    let mut total = 0.0;
    for inst in stream {
        let current: Vec<Vector> = points.iter().map(|l| inst.inner_opt(l)).collect::<Result<_>>()?;
        if let Some(prev) = &prev {
            total += prev
                .iter()
                .zip(&current)
                .map(|(a, b)| (a - b).norm().powf(p))
                .fold(0.0, f64::max);
        }
        prev = Some(current);
    }
    Ok(total)
}

/// `Σ_{t=1}^{T−1} max_λ |F_{t+1}(λ) − F_t(λ)|` with the max over `points`.
pub fn function_variation<I: ExactOracle>(stream: &[I], points: &[Vector]) -> Result<f64> {
    check_grid(points)?;
    let values: Vec<Vec<f64>> = stream
        .iter()
        .map(|inst| points.iter().map(|l| inst.outer_value(l)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok(values
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max))
        .sum())
}

/// `H_1`, `H_2` and `V_1` from one pass of inner solves.
pub fn variation_report<I: ExactOracle>(stream: &[I], points: &[Vector]) -> Result<VariationReport> {
    check_grid(points)?;
    let mut prev: Option<(Vec<Vector>, Vec<f64>)> = None;
    let (mut h1, mut h2, mut v1) = (0.0, 0.0, 0.0);
    for inst in stream {
        let betas: Vec<Vector> = points.iter().map(|l| inst.inner_opt(l)).collect::<Result<_>>()?;
        let values: Vec<f64> = points.iter().zip(&betas).map(|(l, b)| inst.f_value(l, b)).collect();
        if let Some((pb, pv)) = &prev {
            let dist = pb.iter().zip(&betas).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            h1 += dist;
            h2 += dist * dist;
            v1 += pv.iter().zip(&values).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        }
        prev = Some((betas, values));
    }
    Ok(VariationReport {
        h1,
        h2,
        v1,
        grid_size: points.len(),
    })
}
