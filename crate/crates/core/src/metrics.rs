//! PSNR and MS-SSIM for images with peak value 1.
//!
//! MS-SSIM uses the usual constants: an 11×11 Gaussian window with σ = 1.5,
//! `K1 = 0.01`, `K2 = 0.03`, five scales weighted
//! `(0.0448, 0.2856, 0.3001, 0.2363, 0.1333)` and 2×2 mean downsampling.
//! Statistics are computed over the valid region of the window. When the
//! image is too small for five scales, the coarsest scales are dropped and
//! the remaining weights renormalised. Colour images are scored per channel
//! and averaged; negative contrast-structure terms are clamped to zero.

use crate::error::ShapeError;
use crate::raster::ImageBuffer;
use crate::scalar::Real;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ms_ssim: f64,
}

pub fn report<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<MetricReport, ShapeError> {
    Ok(MetricReport {
        psnr: psnr(a, b)?,
        ms_ssim: ms_ssim(a, b)?,
    })
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).clamp(0.0, PSNR_CAP)
}

pub fn mse<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ShapeError> {
    a.check_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.wide() - y.wide();
            d * d
        })
        .sum::<f64>()
        / n)
}

pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ShapeError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Number of scales used for an image of the given size.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && w >= WINDOW && h >= WINDOW {
        scales += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    scales.max(1)
}

pub fn ms_ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ShapeError> {
    a.check_shape(b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let scales = ms_ssim_scales(w, h);
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|v| v / wsum).collect();
    let win = WINDOW.min(odd_floor(w.min(h)));
    let kernel = gaussian_kernel(win, WINDOW_SIGMA);

    let mut total = 0.0;
    for c in 0..ch {
        let mut x = Plane::channel(a, c);
        let mut y = Plane::channel(b, c);
        let mut score = 1.0;
        for (s, &wgt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&x, &y, &kernel);
            if s + 1 == scales {
                score *= ssim.max(0.0).powf(wgt);
            } else {
                score *= cs.max(0.0).powf(wgt);
                x = x.downsample();
                y = y.downsample();
            }
        }
        total += score;
    }
    Ok((total / ch as f64).clamp(0.0, 1.0))
}

fn odd_floor(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n.saturating_sub(1).max(1)
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel<T: Real>(img: &ImageBuffer<T>, c: usize) -> Self {
        Plane {
            w: img.width,
            h: img.height,
            v: img
                .data
                .iter()
                .skip(c)
                .step_by(img.channels)
                .map(|v| v.wide())
                .collect(),
        }
    }

    fn downsample(&self) -> Plane {
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = Vec::with_capacity(w2 * h2);
        for y in 0..h2 {
            for x in 0..w2 {
                let mut s = 0.0;
                let mut n = 0.0;
                for yy in 2 * y..(2 * y + 2).min(self.h) {
                    for xx in 2 * x..(2 * x + 2).min(self.w) {
                        s += self.v[yy * self.w + xx];
                        n += 1.0;
                    }
                }
                v.push(s / n);
            }
        }
        Plane { w: w2, h: h2, v }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }

    /// Separable valid-region filtering.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    s += kv * tmp[(y + i) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        Plane { w: ow, h: oh, v: out }
    }
}

/// Mean SSIM and mean contrast-structure term over the valid map.
fn ssim_terms(x: &Plane, y: &Plane, k: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mx = x.filter(k);
    let my = y.filter(k);
    let sxx = x.mul(x).filter(k);
    let syy = y.mul(y).filter(k);
    let sxy = x.mul(y).filter(k);
    let n = mx.v.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - ux * ux;
        let vy = syy.v[i] - uy * uy;
        let cov = sxy.v[i] - ux * uy;
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (ssim_sum / n, cs_sum / n)
}
