#![allow(dead_code)]

pub mod fd;
pub mod metrics_ref;

use gsimage::gsmodel::covariance_from_rs;
use gsimage::{Gaussian2D, GaussianSet, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const CUTOFF2: f64 = 9.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random set with scales well inside the clamp range.
pub fn random_set(r: &mut ChaCha8Rng, w: usize, h: usize, k: usize, sigma: (f64, f64)) -> GaussianSet<f64> {
    let gaussians = (0..k)
        .map(|_| {
            Gaussian2D::new(
                [r.gen_range(0.0..w as f64), r.gen_range(0.0..h as f64)],
                [r.gen_range(sigma.0..sigma.1).ln(), r.gen_range(sigma.0..sigma.1).ln()],
                r.gen_range(-3.1..3.1),
                [r.gen(), r.gen(), r.gen()],
            )
        })
        .collect();
    GaussianSet::new(w, h, gaussians)
}

pub fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer<f64> {
    ImageBuffer::from_fn(w, h, 3, |_, _, _| r.gen())
}

/// Inclusion mask of every (pixel, gaussian) pair: Mahalanobis² ≤ 9.
pub fn dense_mask(set: &GaussianSet<f64>) -> Vec<bool> {
    let b = set.scale_bounds();
    let mut mask = Vec::with_capacity(set.width * set.height * set.len());
    for y in 0..set.height {
        for x in 0..set.width {
            for g in &set.gaussians {
                let conic = covariance_from_rs(g.log_s, g.theta, &b).inverse();
                let q = conic.quad(x as f64 + 0.5 - g.mu[0], y as f64 + 0.5 - g.mu[1]);
                mask.push(q <= CUTOFF2);
            }
        }
    }
    mask
}

/// Brute-force evaluation over all (k, x) pairs, no tiling. With `mask`
/// given, inclusion is frozen to that pattern instead of recomputed.
pub fn dense_render(set: &GaussianSet<f64>, mask: Option<&[bool]>) -> ImageBuffer<f64> {
    let b = set.scale_bounds();
    let own;
    let mask = match mask {
        Some(m) => m,
        None => {
            own = dense_mask(set);
            &own
        }
    };
    let k = set.len();
    let mut img = ImageBuffer::zeros(set.width, set.height, 3);
    for y in 0..set.height {
        for x in 0..set.width {
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for (i, g) in set.gaussians.iter().enumerate() {
                if !mask[(y * set.width + x) * k + i] {
                    continue;
                }
                let cov = covariance_from_rs(g.log_s, g.theta, &b);
                // Explicit 2×2 inverse.
                let det = cov.a * cov.c - cov.b * cov.b;
                let (ia, ib, ic) = (cov.c / det, -cov.b / det, cov.a / det);
                let dx = x as f64 + 0.5 - g.mu[0];
                let dy = y as f64 + 0.5 - g.mu[1];
                let wgt = (-0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy)).exp();
                den += wgt;
                for c in 0..3 {
                    num[c] += wgt * g.color[c];
                }
            }
            if den > 0.0 {
                for c in 0..3 {
                    img.set(x, y, c, num[c] / (den + EPS));
                }
            }
        }
    }
    img
}

pub fn mse(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
