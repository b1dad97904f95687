//! Central finite differences of the MSE loss through the rasterizer.

use gsimage::raster::{loss_mse, render, render_backward};
use gsimage::{GaussianSet, ImageBuffer, PARAMS_PER_GAUSSIAN};

use super::{dense_mask, dense_render, mse, rel_err};

pub const H: f64 = 1e-4;

/// Worst relative error per parameter class (μ, log s, θ, colour).
#[derive(Debug, Default, Clone)]
pub struct FdReport {
    pub worst: [f64; 4],
    /// Parameters whose ±h probe changed some pixel's support inclusion.
    pub frozen: usize,
    pub total: usize,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.worst.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn class_of(i: usize) -> usize {
    match i % PARAMS_PER_GAUSSIAN {
        0 | 1 => 0,
        2 | 3 => 1,
        4 => 2,
        _ => 3,
    }
}

fn loss_of(set: &GaussianSet<f64>, target: &ImageBuffer<f64>, mask: Option<&[bool]>) -> f64 {
    match mask {
        None => mse(&render(set), target),
        Some(m) => mse(&dense_render(set, Some(m)), target),
    }
}

/// Differentiates every scalar parameter and folds the errors into `out`.
/// Where the ±h perturbation moves a pixel across the support boundary the
/// loss jumps, so the difference is taken with the inclusion pattern frozen
/// at the base point instead.
pub fn check_instance(set: &GaussianSet<f64>, target: &ImageBuffer<f64>, out: &mut FdReport) {
    let (_, dl) = loss_mse(&render(set), target).unwrap();
    let analytic = render_backward(set, &dl).unwrap().to_flat();
    let base_mask = dense_mask(set);
    let flat = set.to_flat();
    // Below this, gradients are rounding noise.
    let floor = 1e-7;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += H;
        let mut minus = flat.clone();
        minus[i] -= H;
        let sp = GaussianSet::from_flat(set.width, set.height, &plus);
        let sm = GaussianSet::from_flat(set.width, set.height, &minus);
        let stable = dense_mask(&sp) == base_mask && dense_mask(&sm) == base_mask;
        let mask = if stable { None } else { Some(base_mask.as_slice()) };
        if !stable {
            out.frozen += 1;
        }
        let fd = (loss_of(&sp, target, mask) - loss_of(&sm, target, mask)) / (2.0 * H);
        let class = class_of(i);
        out.worst[class] = out.worst[class].max(rel_err(analytic[i], fd, floor));
        out.total += 1;
    }
}
