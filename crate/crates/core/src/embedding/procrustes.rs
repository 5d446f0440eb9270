use alloc::vec::Vec;

use super::{centroid, EmbeddingError, Point};

/// Similarity transform mapping a source point set onto a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    pub transformed: Vec<Point>,
    /// Sum of squared residuals after both sets are centered and scaled to
    /// unit Frobenius norm; in `[0, 1]`.
    pub disparity: f64,
    pub scale: f64,
    /// Row-major 2×2 orthogonal matrix (a reflection when `reflected`).
    pub rotation: [[f64; 2]; 2],
    pub translation: Point,
    pub reflected: bool,
}

impl Procrustes {
    pub fn apply(&self, p: Point) -> Point {
        let r = &self.rotation;
        [
            self.scale * (r[0][0] * p[0] + r[0][1] * p[1]) + self.translation[0],
            self.scale * (r[1][0] * p[0] + r[1][1] * p[1]) + self.translation[1],
        ]
    }

    fn identity(source: &[Point]) -> Self {
        Procrustes {
            transformed: source.to_vec(),
            disparity: 1.0,
            scale: 1.0,
            rotation: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
            reflected: false,
        }
    }
}

/// Least-squares alignment of `source` onto `target` by translation, uniform
/// scale, and an orthogonal map (rotation or reflection).
///
/// In 2-D the optimal orthogonal map has a closed form: treating centered
/// points as complex numbers, the best rotation angle is the argument of
/// `Σ y·conj(x)` and the best reflection angle the argument of `Σ y·x`.
pub fn procrustes_align(source: &[Point], target: &[Point]) -> Result<Procrustes, EmbeddingError> {
    if source.len() != target.len() {
        return Err(EmbeddingError::LengthMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    if source.len() < 2 {
        return Err(EmbeddingError::TooFewPoints {
            required: 2,
            found: source.len(),
        });
    }
    let (cs, ct) = (centroid(source), centroid(target));
    let xs: Vec<Point> = source.iter().map(|p| [p[0] - cs[0], p[1] - cs[1]]).collect();
    let ys: Vec<Point> = target.iter().map(|p| [p[0] - ct[0], p[1] - ct[1]]).collect();
    let norm2 = |v: &[Point]| v.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>();
    let (sx, sy) = (norm2(&xs), norm2(&ys));
    if sy <= 1e-24 {
        return Err(EmbeddingError::DegenerateTarget);
    }
    if sx <= 1e-24 {
        return Ok(Procrustes::identity(source));
    }

    // Σ y·conj(x) and Σ y·x as (re, im).
    let (mut rot_re, mut rot_im, mut ref_re, mut ref_im) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        rot_re += y[0] * x[0] + y[1] * x[1];
        rot_im += y[1] * x[0] - y[0] * x[1];
        ref_re += y[0] * x[0] - y[1] * x[1];
        ref_im += y[1] * x[0] + y[0] * x[1];
    }
    let rot_mag = libm::hypot(rot_re, rot_im);
    let ref_mag = libm::hypot(ref_re, ref_im);
    let reflected = ref_mag > rot_mag;
    let (mag, re, im) = if reflected {
        (ref_mag, ref_re, ref_im)
    } else {
        (rot_mag, rot_re, rot_im)
    };
    let (cos, sin) = if mag > 0.0 { (re / mag, im / mag) } else { (1.0, 0.0) };
    let rotation = if reflected {
        [[cos, sin], [sin, -cos]]
    } else {
        [[cos, -sin], [sin, cos]]
    };
    let scale = mag / sx;
    let rc = [
        rotation[0][0] * cs[0] + rotation[0][1] * cs[1],
        rotation[1][0] * cs[0] + rotation[1][1] * cs[1],
    ];
    let translation = [ct[0] - scale * rc[0], ct[1] - scale * rc[1]];

    let corr = mag / libm::sqrt(sx * sy);
    let disparity = (1.0 - corr * corr).max(0.0);

    let mut out = Procrustes {
        transformed: Vec::new(),
        disparity,
        scale,
        rotation,
        translation,
        reflected,
    };
    out.transformed = source.iter().map(|&p| out.apply(p)).collect();
    Ok(out)
}
