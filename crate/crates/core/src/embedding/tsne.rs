//! Exact t-SNE over cosine distances, with a classical-MDS fallback for very
//! small inputs.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{EmbeddingError, Point};
use crate::linalg::symmetric_eigen;

/// Below this many points t-SNE is skipped in favor of classical MDS.
pub const MIN_TSNE_POINTS: usize = 5;

const MIN_GAIN: f64 = 0.01;
const PERPLEXITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub seed: u64,
    /// `None` picks [`auto_perplexity`].
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` uses `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            seed: 0,
            perplexity: None,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

impl ProjectConfig {
    pub fn with_seed(seed: u64) -> Self {
        ProjectConfig {
            seed,
            ..Self::default()
        }
    }

    /// Settings for refining an existing layout: no early exaggeration and a
    /// shorter schedule.
    pub fn warm(seed: u64) -> Self {
        ProjectConfig {
            seed,
            iterations: 300,
            exaggeration_iterations: 0,
            ..Self::default()
        }
    }
}

/// `min(30, max(2, floor((n - 1) / 3)))`.
pub fn auto_perplexity(n: usize) -> f64 {
    (n.saturating_sub(1) / 3).clamp(2, 30) as f64
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<(), EmbeddingError> {
    let Some(first) = vectors.first() else {
        return Ok(());
    };
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != first.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: first.len(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { index: i });
        }
    }
    Ok(())
}

/// Pairwise `1 - cos(a, b)`, clamped to `[0, 2]`. Zero vectors are treated
/// as orthogonal to everything except each other.
pub fn cosine_distances(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| libm::sqrt(v.iter().map(|x| x * x).sum()))
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let value = if norms[i] == 0.0 || norms[j] == 0.0 {
                if norms[i] == norms[j] { 0.0 } else { 1.0 }
            } else {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0)
            };
            d[i][j] = value;
            d[j][i] = value;
        }
    }
    d
}

/// Projects high-dimensional vectors to 2-D, starting from random positions.
pub fn project(vectors: &[Vec<f64>], seed: u64) -> Result<Vec<Point>, EmbeddingError> {
    project_with(vectors, &ProjectConfig::with_seed(seed), None)
}

/// Projects high-dimensional vectors to 2-D.
///
/// `init` seeds the optimizer with known positions (warm start); entries
/// that are `None` start near the centroid of the known ones. Inputs with
/// fewer than [`MIN_TSNE_POINTS`] points use classical MDS, and inputs whose
/// points are all identical map to the origin.
pub fn project_with(
    vectors: &[Vec<f64>],
    config: &ProjectConfig,
    init: Option<&[Option<Point>]>,
) -> Result<Vec<Point>, EmbeddingError> {
    check_vectors(vectors)?;
    let n = vectors.len();
    if n < 2 {
        return Ok(vec![[0.0, 0.0]; n]);
    }
    let distances = cosine_distances(vectors);
    let spread = distances.iter().flatten().fold(0.0f64, |m, &d| m.max(d));
    if spread < 1e-12 {
        return Ok(vec![[0.0, 0.0]; n]);
    }
    if n < MIN_TSNE_POINTS {
        return Ok(classical_mds(&distances));
    }
    Ok(tsne(&distances, config, init))
}

/// Classical (Torgerson) MDS onto the top two principal axes.
fn classical_mds(distances: &[Vec<f64>]) -> Vec<Point> {
    let n = distances.len();
    let sq: Vec<Vec<f64>> = distances
        .iter()
        .map(|row| row.iter().map(|d| d * d).collect())
        .collect();
    let row_mean: Vec<f64> = sq.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let total_mean = row_mean.iter().sum::<f64>() / n as f64;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| -0.5 * (sq[i][j] - row_mean[i] - row_mean[j] + total_mean))
                .collect()
        })
        .collect();
    let (values, vectors) = symmetric_eigen(&b);

    let mut out = vec![[0.0, 0.0]; n];
    for axis in 0..2.min(n) {
        let lambda = values[axis].max(0.0);
        if lambda < 1e-12 {
            continue;
        }
        let v = &vectors[axis];
        // Fix the sign so the largest-magnitude component is positive.
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let s = libm::sqrt(lambda) * sign;
        for (p, x) in out.iter_mut().zip(v) {
            p[axis] = s * x;
        }
    }
    out
}

/// Conditional probabilities for one row, bisecting on the precision so the
/// row entropy matches `ln(perplexity)`.
fn row_affinities(row: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let target = libm::log(perplexity);
    let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, &d) in row.iter().enumerate() {
            out[j] = if j == i { 0.0 } else { libm::exp(-d * beta) };
            sum += out[j];
            weighted += d * out[j];
        }
        if sum == 0.0 {
            sum = 1e-300;
        }
        let entropy = libm::log(sum) + beta * weighted / sum;
        for p in out.iter_mut() {
            *p /= sum;
        }
        let diff = entropy - target;
        if diff.abs() <= PERPLEXITY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
}

fn joint_probabilities(distances: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = distances.len();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        row_affinities(&distances[i], i, perplexity, &mut cond[i * n..(i + 1) * n]);
    }
    let mut p = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = cond[i * n + j] + cond[j * n + i];
            p[i * n + j] = v;
            total += v;
        }
    }
    for v in p.iter_mut() {
        *v = (*v / total).max(f64::EPSILON);
    }
    p
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let unit = |rng: &mut ChaCha8Rng| ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let (u1, u2) = (unit(rng), unit(rng));
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn initial_positions(n: usize, rng: &mut ChaCha8Rng, init: Option<&[Option<Point>]>) -> Vec<f64> {
    let mut y = vec![0.0; 2 * n];
    let known: Vec<Point> = init
        .map(|v| v.iter().flatten().copied().collect())
        .unwrap_or_default();
    let center = if known.is_empty() {
        [0.0, 0.0]
    } else {
        super::centroid(&known)
    };
    for i in 0..n {
        let jitter = [1e-4 * gaussian(rng), 1e-4 * gaussian(rng)];
        let given = init.and_then(|v| v.get(i).copied().flatten());
        let p = given.unwrap_or([center[0] + jitter[0], center[1] + jitter[1]]);
        y[2 * i] = p[0];
        y[2 * i + 1] = p[1];
    }
    y
}

fn tsne(distances: &[Vec<f64>], config: &ProjectConfig, init: Option<&[Option<Point>]>) -> Vec<Point> {
    let n = distances.len();
    let perplexity = config
        .perplexity
        .unwrap_or_else(|| auto_perplexity(n))
        .min((n - 1) as f64);
    let p = joint_probabilities(distances, perplexity);
    let lr = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / config.exaggeration / 4.0).max(50.0));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = initial_positions(n, &mut rng, init);
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kernel = vec![0.0; n * n];

    for iter in 0..config.iterations {
        let early = iter < config.exaggeration_iterations;
        let exaggeration = if early { config.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let k = 1.0 / (1.0 + dx * dx + dy * dy);
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
                z += 2.0 * k;
            }
        }
        let z = z.max(f64::MIN_POSITIVE);

        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = kernel[i * n + j];
                let q = (k / z).max(f64::EPSILON);
                let mult = (exaggeration * p[i * n + j] - q) * k;
                gx += mult * (y[2 * i] - y[2 * j]);
                gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }

        for d in 0..2 * n {
            gains[d] = if update[d] * grad[d] < 0.0 {
                gains[d] + 0.2
            } else {
                (gains[d] * 0.8).max(MIN_GAIN)
            };
            update[d] = momentum * update[d] - lr * gains[d] * grad[d];
            y[d] += update[d];
        }
    }

    (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect()
}
