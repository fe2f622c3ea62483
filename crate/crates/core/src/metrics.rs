//! Sample-quality metrics on 2-D point sets.

use crate::datasets::Point;
use crate::error::{Error, Result};

/// Added to both covariances before the matrix square root.
pub const COV_JITTER: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub frechet_gaussian: f64,
    pub mode_coverage: usize,
    pub high_quality_fraction: f64,
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]` or a general one `[[a, b], [c, d]]`.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: Point,
    /// Unbiased (n − 1) covariance.
    pub cov: Mat2,
}

pub fn moments(points: &[Point]) -> Result<Moments> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 points to fit moments, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let d = n - 1.0;
    Ok(Moments {
        mean: [mx, my],
        cov: [[sxx / d, sxy / d], [sxy / d, syy / d]],
    })
}

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Principal square root of a 2×2 matrix with non-negative real
/// eigenvalues: `(M + s·I) / t` with `s = √det M`, `t = √(tr M + 2s)`.
pub fn sqrtm2(m: &Mat2) -> Mat2 {
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).max(0.0);
    let s = det.sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return [[0.0; 2]; 2];
    }
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}

/// Squared Fréchet distance between Gaussians fitted to `a` and `b`:
/// `|μa − μb|² + tr(Σa + Σb − 2(ΣaΣb)^½)`.
pub fn frechet_from_moments(a: &Moments, b: &Moments) -> f64 {
    let jitter = |c: &Mat2| [[c[0][0] + COV_JITTER, c[0][1]], [c[1][0], c[1][1] + COV_JITTER]];
    let (ca, cb) = (jitter(&a.cov), jitter(&b.cov));
    let root = sqrtm2(&matmul(&ca, &cb));
    let mean_term = (a.mean[0] - b.mean[0]).powi(2) + (a.mean[1] - b.mean[1]).powi(2);
    let trace_term = ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1] - 2.0 * (root[0][0] + root[1][1]);
    let trace_term = if trace_term < 0.0 && trace_term > -1e-9 {
        0.0
    } else {
        trace_term
    };
    mean_term + trace_term
}

pub fn frechet_gaussian_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    Ok(frechet_from_moments(&moments(a)?, &moments(b)?))
}

/// Number of modes with at least one sample within `radius`, and the share
/// of samples within `radius` of their nearest mode.
pub fn mode_coverage(samples: &[Point], modes: &[Point], radius: f64) -> Result<(usize, f64)> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if samples.is_empty() || modes.is_empty() {
        return Ok((0, 0.0));
    }
    let r2 = radius * radius;
    let mut hit = vec![false; modes.len()];
    let mut good = 0usize;
    for s in samples {
        let mut nearest = f64::INFINITY;
        for (h, m) in hit.iter_mut().zip(modes) {
            let d2 = (s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2);
            if d2 <= r2 {
                *h = true;
            }
            nearest = nearest.min(d2);
        }
        if nearest <= r2 {
            good += 1;
        }
    }
    Ok((hit.iter().filter(|&&h| h).count(), good as f64 / samples.len() as f64))
}

pub fn report(generated: &[Point], real: &[Point], modes: &[Point], radius: f64) -> Result<MetricReport> {
    let frechet_gaussian = frechet_gaussian_distance(generated, real)?;
    let (mode_coverage, high_quality_fraction) = mode_coverage(generated, modes, radius)?;
    Ok(MetricReport {
        frechet_gaussian,
        mode_coverage,
        high_quality_fraction,
    })
}
