//! Dual-space image embeddings: projection to 2-D, alignment of the text and
//! image projections, their weighted combination, and clustering.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

mod cluster;
mod procrustes;
mod tsne;

pub use cluster::{cluster, ClusterAssignment};
pub use procrustes::{procrustes_align, Procrustes};
pub use tsne::{auto_perplexity, cosine_distances, project, project_with, ProjectConfig};

/// Dimension of the vectors produced by the embedding provider.
pub const EMBEDDING_DIM: usize = 512;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingError {
    DimensionMismatch { expected: usize, found: usize },
    NonFinite { index: usize },
    LengthMismatch { left: usize, right: usize },
    TooFewPoints { required: usize, found: usize },
    DegenerateTarget,
    AlphaOutOfRange(f64),
}

impl fmt::Display for EmbeddingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingError::DimensionMismatch { expected, found } => {
                write!(f, "vector has {found} components, expected {expected}")
            }
            EmbeddingError::NonFinite { index } => write!(f, "vector {index} has a non-finite component"),
            EmbeddingError::LengthMismatch { left, right } => {
                write!(f, "point sets differ in length ({left} vs {right})")
            }
            EmbeddingError::TooFewPoints { required, found } => {
                write!(f, "need at least {required} points, got {found}")
            }
            EmbeddingError::DegenerateTarget => f.write_str("target points are all coincident"),
            EmbeddingError::AlphaOutOfRange(a) => write!(f, "alpha {a} is outside [0, 1]"),
        }
    }
}

impl core::error::Error for EmbeddingError {}

/// Text and image embedding of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEmbedding {
    pub text_vec: Vec<f64>,
    pub image_vec: Vec<f64>,
}

impl PairEmbedding {
    pub fn validate(&self, dim: usize, index: usize) -> Result<(), EmbeddingError> {
        for v in [&self.text_vec, &self.image_vec] {
            if v.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { index });
            }
        }
        Ok(())
    }
}

/// Per-image 2-D coordinates in both spaces and their combination.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Projection2D {
    /// Text-space projection after alignment onto the image space.
    pub text_xy: Vec<Point>,
    pub image_xy: Vec<Point>,
    pub combined_xy: Vec<Point>,
    pub alpha: f64,
    /// Residual of the text-to-image alignment, after standardization.
    pub disparity: f64,
}

/// Convex combination `alpha * text + (1 - alpha) * image`, per point.
pub fn combine(text_xy: &[Point], image_xy: &[Point], alpha: f64) -> Result<Vec<Point>, EmbeddingError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EmbeddingError::AlphaOutOfRange(alpha));
    }
    if text_xy.len() != image_xy.len() {
        return Err(EmbeddingError::LengthMismatch {
            left: text_xy.len(),
            right: image_xy.len(),
        });
    }
    let beta = 1.0 - alpha;
    Ok(text_xy
        .iter()
        .zip(image_xy)
        .map(|(t, i)| [alpha * t[0] + beta * i[0], alpha * t[1] + beta * i[1]])
        .collect())
}

/// Centers the points and scales them to unit root-mean-square radius.
/// Coincident inputs map to the origin.
pub fn standardize(points: &[Point]) -> Vec<Point> {
    if points.is_empty() {
        return Vec::new();
    }
    let c = centroid(points);
    let centered: Vec<Point> = points.iter().map(|p| [p[0] - c[0], p[1] - c[1]]).collect();
    let ms = centered.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / points.len() as f64;
    if ms <= 1e-24 {
        return alloc::vec![[0.0, 0.0]; points.len()];
    }
    let r = libm::sqrt(ms);
    centered.iter().map(|p| [p[0] / r, p[1] / r]).collect()
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn combine_boundaries() {
        let t = vec![[1.5, -2.0], [0.3, 7.0]];
        let i = vec![[9.0, 4.0], [-1.0, 0.1]];
        assert_eq!(combine(&t, &i, 1.0).unwrap(), t);
        assert_eq!(combine(&t, &i, 0.0).unwrap(), i);
        let mid = combine(&[[0.0, 0.0]], &[[2.0, 4.0]], 0.5).unwrap();
        assert_eq!(mid, vec![[1.0, 2.0]]);
    }

    #[test]
    fn combine_rejects_bad_alpha() {
        let p = vec![[0.0, 0.0]];
        assert_eq!(combine(&p, &p, 1.5), Err(EmbeddingError::AlphaOutOfRange(1.5)));
        assert!(combine(&p, &p, -0.1).is_err());
        assert!(combine(&p, &p, f64::NAN).is_err());
        assert!(matches!(
            combine(&p, &[], 0.5),
            Err(EmbeddingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn standardize_unit_rms() {
        let s = standardize(&[[1.0, 1.0], [3.0, 1.0], [2.0, 5.0]]);
        let c = centroid(&s);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        let ms: f64 = s.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / 3.0;
        assert!((ms - 1.0).abs() < 1e-12);
        assert_eq!(standardize(&[[4.0, 4.0], [4.0, 4.0]]), vec![[0.0, 0.0]; 2]);
    }

    proptest! {
        #[test]
        fn combine_stays_in_box(
            pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 1..20),
            alpha in 0.0f64..=1.0,
        ) {
            let t: Vec<Point> = pts.iter().map(|p| [p.0, p.1]).collect();
            let i: Vec<Point> = pts.iter().map(|p| [p.2, p.3]).collect();
            let c = combine(&t, &i, alpha).unwrap();
            for k in 0..c.len() {
                for d in 0..2 {
                    let lo = t[k][d].min(i[k][d]);
                    let hi = t[k][d].max(i[k][d]);
                    let eps = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                    prop_assert!(c[k][d] >= lo - eps && c[k][d] <= hi + eps);
                }
            }
        }
    }
}
