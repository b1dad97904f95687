//! Analytic gradients of a scalar loss through the normalized rasterizer.
//!
//! For one pixel with `D = Σ w_k`, `N = Σ w_k c_k` and `Î = N / (D + ε)`:
//!
//! ```text
//! ∂L/∂c_k = w_k g / (D + ε)
//! ∂L/∂w_k = Σ_ch g_ch (c_k,ch − Î_ch) / (D + ε)
//! ∂L/∂q_k = −½ w_k ∂L/∂w_k          (w = exp(−q/2))
//! ```
//!
//! `q = dᵀ P d` with `P = Σ⁻¹` gives gradients for the centre and the conic
//! entries; these are mapped back to `Σ` by differentiating the 2×2 inverse,
//! then to the stored `(log s_x, log s_y, θ)` through `Σ = R S² Rᵀ`.

use rayon::prelude::*;

use super::{masked_weight, prepare, ImageBuffer, Prepared, RasterConfig, TileIndex};
use crate::error::ShapeError;
use crate::gsmodel::{GaussianSet, PARAMS_PER_GAUSSIAN};
use crate::scalar::Real;

/// Per-Gaussian partial derivatives of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients<T> {
    pub mu: Vec<[T; 2]>,
    pub log_s: Vec<[T; 2]>,
    pub theta: Vec<T>,
    pub color: Vec<[T; 3]>,
}

impl<T: Real> RenderGradients<T> {
    pub fn zeros(k: usize) -> Self {
        Self {
            mu: vec![[T::zero(); 2]; k],
            log_s: vec![[T::zero(); 2]; k],
            theta: vec![T::zero(); k],
            color: vec![[T::zero(); 3]; k],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Same layout as [`GaussianSet::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * PARAMS_PER_GAUSSIAN);
        for k in 0..self.len() {
            out.extend_from_slice(&self.mu[k]);
            out.extend_from_slice(&self.log_s[k]);
            out.push(self.theta[k]);
            out.extend_from_slice(&self.color[k]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Accumulator slots per Gaussian: dμx, dμy, dA, dB, dC, dr, dg, db.
const SLOTS: usize = 8;

pub fn render_backward<T: Real>(
    set: &GaussianSet<T>,
    dl_dimage: &ImageBuffer<T>,
) -> Result<RenderGradients<T>, ShapeError> {
    render_backward_with(set, dl_dimage, &RasterConfig::default())
}

pub fn render_backward_with<T: Real>(
    set: &GaussianSet<T>,
    dl_dimage: &ImageBuffer<T>,
    cfg: &RasterConfig<T>,
) -> Result<RenderGradients<T>, ShapeError> {
    let (w, h) = (set.width, set.height);
    if dl_dimage.width != w || dl_dimage.height != h || dl_dimage.channels != 3 {
        return Err(ShapeError::Mismatch {
            expected: format!("{w}x{h}x3"),
            actual: format!("{}x{}x{}", dl_dimage.width, dl_dimage.height, dl_dimage.channels),
        });
    }
    let k = set.len();
    if k == 0 {
        return Ok(RenderGradients::zeros(0));
    }
    let prepared = prepare(set, cfg);
    let index = TileIndex::from_prepared(&prepared, w, h, cfg.tile_size);
    let cutoff2 = cfg.cutoff * cfg.cutoff;

    let partials: Vec<Vec<T>> = (0..index.tiles_y)
        .into_par_iter()
        .map(|ty| tile_row_partials(&prepared, &index, ty, dl_dimage, cfg, cutoff2))
        .collect();

    let mut acc = vec![T::zero(); k * SLOTS];
    for row in &partials {
        if row.is_empty() {
            continue;
        }
        for (a, &p) in acc.iter_mut().zip(row) {
            *a += p;
        }
    }

    let mut grads = RenderGradients::zeros(k);
    for (i, p) in prepared.iter().enumerate() {
        let s = &acc[i * SLOTS..(i + 1) * SLOTS];
        grads.mu[i] = [s[0], s[1]];
        grads.color[i] = [s[5], s[6], s[7]];
        let (dls, dtheta) = chain_conic_to_params(p, set.gaussians[i].theta, s[2], s[3], s[4]);
        grads.log_s[i] = dls;
        grads.theta[i] = dtheta;
    }
    Ok(grads)
}

fn tile_row_partials<T: Real>(
    prepared: &[Prepared<T>],
    index: &TileIndex,
    ty: usize,
    dl: &ImageBuffer<T>,
    cfg: &RasterConfig<T>,
    cutoff2: T,
) -> Vec<T> {
    let (w, h) = (dl.width, dl.height);
    let any = (0..index.tiles_x).any(|tx| !index.bin(tx, ty).is_empty());
    if !any {
        return Vec::new();
    }
    let mut acc = vec![T::zero(); prepared.len() * SLOTS];
    let half = T::of(0.5);
    for tx in 0..index.tiles_x {
        let bin = index.bin(tx, ty);
        if bin.is_empty() {
            continue;
        }
        let (x0, x1, y0, y1) = index.tile_span(tx, ty, w, h);
        for y in y0..y1 {
            let py = T::of_usize(y) + half;
            for x in x0..x1 {
                let g = dl.pixel(x, y);
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                let px = T::of_usize(x) + half;
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
                if den <= T::zero() {
                    continue;
                }
                let inv = T::one() / (den + cfg.eps);
                let out = [num[0] * inv, num[1] * inv, num[2] * inv];
                for &k in bin {
                    let p = &prepared[k as usize];
                    let Some((wgt, dx, dy)) = masked_weight(p, px, py, cutoff2) else {
                        continue;
                    };
                    let slot = &mut acc[k as usize * SLOTS..(k as usize + 1) * SLOTS];
                    let mut dl_dw = T::zero();
                    for c in 0..3 {
                        slot[5 + c] += wgt * g[c] * inv;
                        dl_dw += g[c] * (p.color[c] - out[c]);
                    }
                    dl_dw *= inv;
                    let dl_dq = -half * wgt * dl_dw;
                    // ∂q/∂μ = −2 P d
                    let pdx = p.conic.a * dx + p.conic.b * dy;
                    let pdy = p.conic.b * dx + p.conic.c * dy;
                    let two = T::of(2.0);
                    slot[0] -= two * dl_dq * pdx;
                    slot[1] -= two * dl_dq * pdy;
                    slot[2] += dl_dq * dx * dx;
                    slot[3] += dl_dq * two * dx * dy;
                    slot[4] += dl_dq * dy * dy;
                }
            }
        }
    }
    acc
}

/// Maps gradients w.r.t. the conic entries `(A, B, C)` of `P = Σ⁻¹` to the
/// stored log-scales and rotation.
fn chain_conic_to_params<T: Real>(p: &Prepared<T>, theta: T, d_pa: T, d_pb: T, d_pc: T) -> ([T; 2], T) {
    let (a, b, c) = (p.cov.a, p.cov.b, p.cov.c);
    let det = a * c - b * b;
    let id2 = T::one() / (det * det);
    let two = T::of(2.0);
    // A = c/det, B = −b/det, C = a/det
    let g_a = (-d_pa * c * c + d_pb * b * c - d_pc * b * b) * id2;
    let g_b = (d_pa * two * b * c - d_pb * (a * c + b * b) + d_pc * two * a * b) * id2;
    let g_c = (-d_pa * b * b + d_pb * a * b - d_pc * a * a) * id2;

    // a = cos²X + sin²Y, b = cos·sin(X − Y), c = sin²X + cos²Y
    let (sin, cos) = theta.sin_cos();
    let vx = p.scale[0] * p.scale[0];
    let vy = p.scale[1] * p.scale[1];
    let cs = cos * sin;
    let g_vx = g_a * cos * cos + g_b * cs + g_c * sin * sin;
    let g_vy = g_a * sin * sin - g_b * cs + g_c * cos * cos;
    let g_theta = g_a * two * cs * (vy - vx) + g_b * (cos * cos - sin * sin) * (vx - vy) + g_c * two * cs * (vx - vy);
    // d(s²)/d(log s) = 2 s²; zero where the clamp is active.
    let g_lx = if p.clamped[0] { T::zero() } else { g_vx * two * vx };
    let g_ly = if p.clamped[1] { T::zero() } else { g_vy * two * vy };
    ([g_lx, g_ly], g_theta)
}
