//! Dense attribute maps and the grid gather that turns them into Gaussians.

use gsimage::{Gaussian2D, GaussianSet, RenderGradients, ScaleBounds};

use crate::scalar::NeuralReal;
use crate::tensor::Tensor;

pub const ATTRIBUTE_CHANNELS: usize = 8;

/// Planar `8 × H × W` map: offset x/y (px), log-scale x/y, rotation (rad),
/// colour r/g/b.
///
/// The scale channels are added to a budget-dependent base log-scale when
/// gathered, so one map serves every `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMaps<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: NeuralReal> AttributeMaps<T> {
    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (n, c, h, w) = t.nchw();
        assert!(
            n == 1 && c == ATTRIBUTE_CHANNELS,
            "attribute tensor must be (1, 8, H, W), got {:?}",
            t.shape
        );
        Self {
            width: w,
            height: h,
            data: t.data.clone(),
        }
    }

    /// Maps that gather to the default attributes: no offset, base scale, no
    /// rotation, grey.
    pub fn neutral(width: usize, height: usize) -> Self {
        let plane = width * height;
        let mut data = vec![T::zero(); ATTRIBUTE_CHANNELS * plane];
        data[5 * plane..].fill(T::of(0.5));
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, channel: usize, x: usize, y: usize) -> T {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn offset(&self, x: usize, y: usize) -> [T; 2] {
        [self.at(0, x, y), self.at(1, x, y)]
    }

    pub fn log_scale(&self, x: usize, y: usize) -> [T; 2] {
        [self.at(2, x, y), self.at(3, x, y)]
    }

    pub fn rotation(&self, x: usize, y: usize) -> T {
        self.at(4, x, y)
    }

    pub fn color(&self, x: usize, y: usize) -> [T; 3] {
        [self.at(5, x, y), self.at(6, x, y), self.at(7, x, y)]
    }

    fn cell(&self, p: [T; 2]) -> (usize, usize) {
        let clamp = |v: T, n: usize| v.floor().to_usize().unwrap_or(0).min(n.saturating_sub(1));
        (clamp(p[0], self.width), clamp(p[1], self.height))
    }
}

/// Per-position reads from the cell containing it. Refined centres
/// `μ + δ` are clamped into the image, and log-scales `base + map` into the
/// scale bounds.
pub fn gather_attributes<T: NeuralReal>(
    maps: &AttributeMaps<T>,
    positions: &[[T; 2]],
    base_log_scale: T,
) -> GaussianSet<T> {
    let mut set = GaussianSet::<T>::empty(maps.width, maps.height);
    let bounds = set.scale_bounds();
    let upper = set.position_upper();
    set.gaussians = positions
        .iter()
        .map(|&p| {
            let (x, y) = maps.cell(p);
            let off = maps.offset(x, y);
            let ls = maps.log_scale(x, y);
            let mu = [0, 1].map(|a| (p[a] + off[a]).max(T::zero()).min(upper[a]));
            let log_s = [0, 1].map(|a| clamp_log(base_log_scale + ls[a], &bounds).0);
            Gaussian2D::new(mu, log_s, maps.rotation(x, y), maps.color(x, y))
        })
        .collect();
    set
}

fn clamp_log<T: NeuralReal>(v: T, b: &ScaleBounds<T>) -> (T, bool) {
    let (lo, hi) = (b.log_min(), b.log_max());
    if v < lo {
        (lo, true)
    } else if v > hi {
        (hi, true)
    } else {
        (v, false)
    }
}

/// Scatters per-Gaussian gradients from the rasterizer back onto map cells,
/// as a `(1, 8, H, W)` tensor. Clamped coordinates receive no gradient.
pub fn gather_backward<T: NeuralReal>(
    maps: &AttributeMaps<T>,
    positions: &[[T; 2]],
    base_log_scale: T,
    grads: &RenderGradients<T>,
) -> Tensor<T> {
    let (w, h) = (maps.width, maps.height);
    let probe = GaussianSet::<T>::empty(w, h);
    let bounds = probe.scale_bounds();
    let upper = probe.position_upper();
    let mut out = Tensor::zeros(&[1, ATTRIBUTE_CHANNELS, h, w]);
    let plane = w * h;
    for (k, &p) in positions.iter().enumerate() {
        let (x, y) = maps.cell(p);
        let at = |c: usize| c * plane + y * w + x;
        let off = maps.offset(x, y);
        let ls = maps.log_scale(x, y);
        for a in 0..2 {
            let m = p[a] + off[a];
            if m >= T::zero() && m <= upper[a] {
                out.data[at(a)] += grads.mu[k][a];
            }
            if !clamp_log(base_log_scale + ls[a], &bounds).1 {
                out.data[at(2 + a)] += grads.log_s[k][a];
            }
        }
        out.data[at(4)] += grads.theta[k];
        for c in 0..3 {
            out.data[at(5 + c)] += grads.color[k][c];
        }
    }
    out
}
