//! Tile-based normalized rasterizer and its analytic backward pass.
//!
//! Each pixel `x` receives
//!
//! ```text
//! Î(x) = Σ_k G_k(x) c_k / (Σ_k G_k(x) + ε)
//! ```
//!
//! where the sums run over Gaussians whose Mahalanobis distance to the pixel
//! centre is within the support cutoff. Gaussians are binned into square
//! tiles by their clipped support box; a tile only visits its own bin, in
//! ascending Gaussian order.
//!
//! Work is split by tile row. The forward pass writes disjoint row bands, so
//! it is bitwise deterministic for any thread count. The backward pass gives
//! every tile row its own gradient accumulator and merges them in row order,
//! which makes it deterministic too.

mod backward;
mod buffer;

pub use backward::{render_backward, render_backward_with, RenderGradients};
pub use buffer::{center_crop_offset, ImageBuffer};

use rayon::prelude::*;

use crate::error::ShapeError;
use crate::gsmodel::{covariance_from_scales, support_rect, Covariance2x2, GaussianSet, PixelRect, DEFAULT_CUTOFF};
use crate::scalar::Real;

/// Stabiliser added to the normalising denominator.
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_TILE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig<T> {
    pub tile_size: usize,
    /// Support radius in standard deviations.
    pub cutoff: T,
    pub eps: T,
}

impl<T: Real> Default for RasterConfig<T> {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            cutoff: T::of(DEFAULT_CUTOFF),
            eps: T::of(DEFAULT_EPS),
        }
    }
}

/// A primitive with its covariance already inverted and support computed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Prepared<T> {
    pub mu: [T; 2],
    pub cov: Covariance2x2<T>,
    pub conic: Covariance2x2<T>,
    pub color: [T; 3],
    pub rect: PixelRect,
    pub scale: [T; 2],
    pub clamped: [bool; 2],
}

pub(crate) fn prepare<T: Real>(set: &GaussianSet<T>, cfg: &RasterConfig<T>) -> Vec<Prepared<T>> {
    let bounds = set.scale_bounds();
    set.gaussians
        .iter()
        .map(|g| {
            let (sx, cx) = bounds.scale(g.log_s[0]);
            let (sy, cy) = bounds.scale(g.log_s[1]);
            let cov = covariance_from_scales(sx, sy, g.theta);
            Prepared {
                mu: g.mu,
                cov,
                conic: cov.inverse(),
                color: g.color,
                rect: support_rect(g.mu, &cov, cfg.cutoff, set.width, set.height),
                scale: [sx, sy],
                clamped: [cx, cy],
            }
        })
        .collect()
}

/// Per-tile lists of Gaussian indices whose support box meets the tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileIndex {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: Vec<Vec<u32>>,
}

impl TileIndex {
    pub fn build<T: Real>(set: &GaussianSet<T>, cfg: &RasterConfig<T>) -> Self {
        Self::from_prepared(&prepare(set, cfg), set.width, set.height, cfg.tile_size)
    }

    pub(crate) fn from_prepared<T: Real>(
        prepared: &[Prepared<T>],
        width: usize,
        height: usize,
        tile_size: usize,
    ) -> Self {
        assert!(tile_size > 0, "tile size must be positive");
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for (k, p) in prepared.iter().enumerate() {
            if p.rect.is_empty() {
                continue;
            }
            let tx0 = p.rect.x0 as usize / tile_size;
            let tx1 = p.rect.x1 as usize / tile_size;
            let ty0 = p.rect.y0 as usize / tile_size;
            let ty1 = p.rect.y1 as usize / tile_size;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Self {
            tile_size,
            tiles_x,
            tiles_y,
            bins,
        }
    }

    pub fn bin(&self, tx: usize, ty: usize) -> &[u32] {
        &self.bins[ty * self.tiles_x + tx]
    }

    /// Pixel span `[x0, x1) × [y0, y1)` of a tile, clipped to the image.
    pub fn tile_span(&self, tx: usize, ty: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let ts = self.tile_size;
        (
            tx * ts,
            ((tx + 1) * ts).min(width),
            ty * ts,
            ((ty + 1) * ts).min(height),
        )
    }
}

/// Weight of a prepared Gaussian at a pixel centre, or `None` outside the
/// cutoff ellipse.
#[inline(always)]
pub(crate) fn masked_weight<T: Real>(p: &Prepared<T>, px: T, py: T, cutoff2: T) -> Option<(T, T, T)> {
    let dx = px - p.mu[0];
    let dy = py - p.mu[1];
    let q = p.conic.quad(dx, dy);
    if q <= cutoff2 {
        Some(((-q * T::of(0.5)).exp(), dx, dy))
    } else {
        None
    }
}

/// Renders with the default configuration.
pub fn render<T: Real>(set: &GaussianSet<T>) -> ImageBuffer<T> {
    render_with(set, &RasterConfig::default())
}

pub fn render_with<T: Real>(set: &GaussianSet<T>, cfg: &RasterConfig<T>) -> ImageBuffer<T> {
    let (w, h) = (set.width, set.height);
    let mut out = ImageBuffer::zeros(w, h, 3);
    if set.is_empty() || w == 0 || h == 0 {
        return out;
    }
    let prepared = prepare(set, cfg);
    let index = TileIndex::from_prepared(&prepared, w, h, cfg.tile_size);
    let cutoff2 = cfg.cutoff * cfg.cutoff;
    let band = cfg.tile_size * w * 3;
    out.data.par_chunks_mut(band).enumerate().for_each(|(ty, rows)| {
        for tx in 0..index.tiles_x {
            let bin = index.bin(tx, ty);
            if bin.is_empty() {
                continue;
            }
            let (x0, x1, y0, y1) = index.tile_span(tx, ty, w, h);
            for y in y0..y1 {
                let py = T::of_usize(y) + T::of(0.5);
                for x in x0..x1 {
                    let px = T::of_usize(x) + T::of(0.5);
                    let mut num = [T::zero(); 3];
                    let mut den = T::zero();
                    for &k in bin {
                        let p = &prepared[k as usize];
                        if let Some((wgt, _, _)) = masked_weight(p, px, py, cutoff2) {
                            den += wgt;
                            for c in 0..3 {
                                num[c] += wgt * p.color[c];
                            }
                        }
                    }
                    if den > T::zero() {
                        let inv = T::one() / (den + cfg.eps);
                        let o = ((y - y0) * w + x) * 3;
                        for c in 0..3 {
                            rows[o + c] = num[c] * inv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Mean squared error over all pixel-channels and its gradient
/// `2(Î − I)/N`. The sum is accumulated in `f64`.
pub fn loss_mse<T: Real>(
    rendered: &ImageBuffer<T>,
    target: &ImageBuffer<T>,
) -> Result<(T, ImageBuffer<T>), ShapeError> {
    rendered.check_shape(target)?;
    let n = rendered.data.len().max(1);
    let scale = T::of(2.0 / n as f64);
    let mut sum = 0.0f64;
    let mut grad = ImageBuffer::zeros(rendered.width, rendered.height, rendered.channels);
    for ((g, &a), &b) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = a - b;
        sum += d.wide() * d.wide();
        *g = d * scale;
    }
    Ok((T::of(sum / n as f64), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsmodel::Gaussian2D;
    use approx::assert_relative_eq;

    #[test]
    fn empty_set_renders_black() {
        let img = render(&GaussianSet::<f32>::empty(9, 5));
        assert_eq!((img.width, img.height, img.channels), (9, 5, 3));
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_gaussian_at_pixel_centre() {
        let c = [0.2, 0.6, 0.9];
        let set = GaussianSet::new(8, 8, vec![Gaussian2D::isotropic([3.5f64, 4.5], 1.5, c)]);
        let img = render(&set);
        for ch in 0..3 {
            assert_relative_eq!(img.get(3, 4, ch), c[ch] / (1.0 + 1e-6), max_relative = 1e-15);
        }
    }

    #[test]
    fn non_square_images_and_partial_tiles() {
        let set = GaussianSet::new(
            37,
            21,
            vec![
                Gaussian2D::isotropic([36.0f64, 20.0], 2.0, [1.0, 0.0, 0.0]),
                Gaussian2D::isotropic([17.0f64, 3.0], 4.0, [0.0, 1.0, 0.0]),
            ],
        );
        let img = render(&set);
        assert!(img.get(36, 20, 0) > 0.99);
        assert!(img.get(17, 3, 1) > 0.99);
        assert_eq!(img.get(0, 20, 0), 0.0);
    }

    #[test]
    fn tile_index_covers_support() {
        let cfg = RasterConfig::<f64>::default();
        let set = GaussianSet::new(40, 40, vec![Gaussian2D::new([15.9, 16.1], [1.2, 0.1], 0.4, [0.5; 3])]);
        let index = TileIndex::build(&set, &cfg);
        let b = set.scale_bounds();
        for y in 0..40 {
            for x in 0..40 {
                let w = crate::gsmodel::gaussian_weight(&set.gaussians[0], [x as f64 + 0.5, y as f64 + 0.5], &b);
                if w >= (-4.5f64).exp() {
                    assert!(index.bin(x / 16, y / 16).contains(&0));
                }
            }
        }
    }

    #[test]
    fn mse_constant_residual() {
        let a = ImageBuffer::filled(4, 3, &[0.6f64, 0.4, 0.3]);
        let b = ImageBuffer::filled(4, 3, &[0.5f64, 0.3, 0.2]);
        let (l, g) = loss_mse(&a, &b).unwrap();
        assert_relative_eq!(l, 0.01, max_relative = 1e-12);
        assert_relative_eq!(g.data[0], 2.0 * 0.1 / 36.0, max_relative = 1e-9);
        let (l, g) = loss_mse(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(loss_mse(&a, &ImageBuffer::zeros(4, 3, 1)).is_err());
    }
}
