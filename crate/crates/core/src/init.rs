//! Position initialization: uniform random, gradient heuristic, sampling from
//! a heatmap, and projection of discrete positions back into a heatmap.
//!
//! Every sampler draws whole cells and returns the cell centre
//! `(x + 0.5, y + 0.5)`. Draws are i.i.d. with replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::InitError;
use crate::raster::ImageBuffer;
use crate::scalar::Real;

/// Default projection kernel width, in pixels.
pub const DEFAULT_SIGMA_PROJ: f64 = 1.5;
/// Default uniform mixing weight for the gradient heuristic.
pub const DEFAULT_UNIFORM_FLOOR: f64 = 0.1;

/// Non-negative per-pixel field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Real> Heatmap<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![T::zero(); width * height],
        }
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![T::one(); width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), width * height, "heatmap size mismatch");
        Self { width, height, values }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|v| v.wide()).sum()
    }

    /// Distribution `h / Σh` in `f64`.
    pub fn probabilities(&self) -> Result<Vec<f64>, InitError> {
        self.check()?;
        let total = self.total();
        if total <= 0.0 {
            return Err(InitError::ZeroMass);
        }
        Ok(self.values.iter().map(|v| v.wide() / total).collect())
    }

    fn check(&self) -> Result<(), InitError> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() || *v < T::zero() {
                return Err(InitError::InvalidValue {
                    x: i % self.width.max(1),
                    y: i / self.width.max(1),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Heatmap<U> {
        Heatmap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| U::of(v.wide())).collect(),
        }
    }

    /// Mean absolute difference to another heatmap of the same size.
    pub fn l1_distance(&self, other: &Heatmap<T>) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let n = self.values.len().max(1) as f64;
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.wide() - b.wide()).abs())
            .sum::<f64>()
            / n
    }
}

fn cell_center<T: Real>(cell: usize, width: usize) -> [T; 2] {
    [T::of((cell % width) as f64 + 0.5), T::of((cell / width) as f64 + 0.5)]
}

/// Draws `k` cells i.i.d. from `h / Σh` and returns their centres.
pub fn sample_positions<T: Real>(h: &Heatmap<T>, k: usize, seed: u64) -> Result<Vec<[T; 2]>, InitError> {
    if k == 0 {
        return Err(InitError::ZeroCount);
    }
    let probs = h.probabilities()?;
    sample_from_probabilities(&probs, h.width, k, seed)
}

fn sample_from_probabilities<T: Real>(
    probs: &[f64],
    width: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<[T; 2]>, InitError> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(InitError::ZeroMass);
    }
    let last_positive = probs.iter().rposition(|&p| p > 0.0).ok_or(InitError::ZeroMass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            // First cell whose cumulative mass exceeds u; zero-mass cells
            // have cdf equal to their predecessor and are never selected.
            let cell = cdf.partition_point(|&c| c <= u).min(last_positive);
            cell_center(cell, width)
        })
        .collect())
}

/// Uniform i.i.d. cells over the `width × height` grid.
pub fn random_init<T: Real>(width: usize, height: usize, k: usize, seed: u64) -> Result<Vec<[T; 2]>, InitError> {
    if k == 0 {
        return Err(InitError::ZeroCount);
    }
    if width == 0 || height == 0 {
        return Err(InitError::EmptyImage { width, height });
    }
    let n = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| cell_center(rng.gen_range(0..n), width)).collect())
}

/// Sobel gradient magnitude of the channel-mean image, replicate border.
pub fn sobel_magnitude<T: Real>(image: &ImageBuffer<T>) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let lum: Vec<f64> = image.luminance().iter().map(|v| v.wide()).collect();
    let at = |x: i64, y: i64| {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        lum[yc * w + xc]
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Mixture `(1−λ)·|∇I|/Σ|∇I| + λ/(W·H)` used by [`gradient_init`].
pub fn gradient_distribution<T: Real>(image: &ImageBuffer<T>, uniform_floor: f64) -> Result<Vec<f64>, InitError> {
    if !(0.0..=1.0).contains(&uniform_floor) {
        return Err(InitError::BadFloor(uniform_floor));
    }
    let n = image.width * image.height;
    if n == 0 {
        return Err(InitError::EmptyImage {
            width: image.width,
            height: image.height,
        });
    }
    let mag = sobel_magnitude(image);
    let total: f64 = mag.iter().sum();
    let floor = uniform_floor / n as f64;
    if total <= 0.0 {
        if uniform_floor == 0.0 {
            return Err(InitError::ZeroMass);
        }
        return Ok(vec![1.0 / n as f64; n]);
    }
    let scale = (1.0 - uniform_floor) / total;
    Ok(mag.iter().map(|m| m * scale + floor).collect())
}

/// Samples `k` positions from the Sobel-magnitude map mixed with a uniform
/// floor `λ`.
pub fn gradient_init<T: Real>(
    image: &ImageBuffer<T>,
    k: usize,
    seed: u64,
    uniform_floor: f64,
) -> Result<Vec<[T; 2]>, InitError> {
    if k == 0 {
        return Err(InitError::ZeroCount);
    }
    let probs = gradient_distribution(image, uniform_floor)?;
    sample_from_probabilities(&probs, image.width, k, seed)
}

/// Splats a unit-peak isotropic kernel of width `sigma_proj` (3σ support) at
/// every position and combines overlaps with `max`, giving values in `[0, 1]`.
pub fn project_positions<T: Real>(positions: &[[T; 2]], width: usize, height: usize, sigma_proj: f64) -> Heatmap<T> {
    assert!(sigma_proj > 0.0, "projection sigma must be positive");
    let mut values = vec![0.0f64; width * height];
    let radius = 3.0 * sigma_proj;
    let r2 = radius * radius;
    let inv = 1.0 / (2.0 * sigma_proj * sigma_proj);
    for p in positions {
        let (px, py) = (p[0].wide(), p[1].wide());
        let x0 = ((px - radius - 0.5).ceil().max(0.0)) as usize;
        let y0 = ((py - radius - 0.5).ceil().max(0.0)) as usize;
        let x1 = (px + radius - 0.5).floor().min(width as f64 - 1.0);
        let y1 = (py + radius - 0.5).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            let dy = y as f64 + 0.5 - py;
            for x in x0..=x1 as usize {
                let dx = x as f64 + 0.5 - px;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 {
                    let v = (-d2 * inv).exp();
                    let slot = &mut values[y * width + x];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
    }
    Heatmap {
        width,
        height,
        values: values.into_iter().map(T::of).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_heatmap_places_every_sample_on_the_hot_cell() {
        let mut h = Heatmap::<f32>::zeros(8, 6);
        h.values[3 * 8 + 5] = 0.7;
        let pos = sample_positions(&h, 50, 1).unwrap();
        assert!(pos.iter().all(|p| *p == [5.5, 3.5]));
    }

    #[test]
    fn zero_mass_and_bad_values_are_errors() {
        let h = Heatmap::<f32>::zeros(4, 4);
        assert_eq!(sample_positions(&h, 3, 0), Err(InitError::ZeroMass));
        let mut h = Heatmap::<f32>::uniform(4, 4);
        h.values[5] = -1.0;
        assert!(matches!(
            sample_positions(&h, 3, 0),
            Err(InitError::InvalidValue { x: 1, y: 1 })
        ));
        assert_eq!(
            sample_positions(&Heatmap::<f32>::uniform(2, 2), 0, 0),
            Err(InitError::ZeroCount)
        );
    }

    #[test]
    fn random_init_is_seeded_and_in_bounds() {
        let a: Vec<[f64; 2]> = random_init(13, 7, 200, 42).unwrap();
        let b: Vec<[f64; 2]> = random_init(13, 7, 200, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p[0] > 0.0 && p[0] < 13.0 && p[1] > 0.0 && p[1] < 7.0));
        let one: Vec<[f32; 2]> = random_init(5, 5, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn random_init_mean_is_image_centre() {
        let p: Vec<[f64; 2]> = random_init(64, 48, 100_000, 7).unwrap();
        let mx = p.iter().map(|v| v[0]).sum::<f64>() / p.len() as f64;
        let my = p.iter().map(|v| v[1]).sum::<f64>() / p.len() as f64;
        assert!((mx - 32.0).abs() < 0.32);
        assert!((my - 24.0).abs() < 0.24);
    }

    #[test]
    fn constant_image_requires_a_floor() {
        let img = ImageBuffer::filled(8, 8, &[0.4f32, 0.4, 0.4]);
        assert_eq!(gradient_init(&img, 10, 0, 0.0), Err(InitError::ZeroMass));
        let probs = gradient_distribution(&img, DEFAULT_UNIFORM_FLOOR).unwrap();
        assert!(probs.iter().all(|&p| (p - 1.0 / 64.0).abs() < 1e-15));
        assert!(gradient_init(&img, 10, 0, 1.5).is_err());
    }

    #[test]
    fn single_position_projection() {
        let h: Heatmap<f64> = project_positions(&[[4.5, 4.5]], 10, 10, 1.5);
        assert_eq!(h.get(4, 4), 1.0);
        // Distance 1.5 px = one σ.
        let p: Heatmap<f64> = project_positions(&[[4.5, 3.0]], 10, 10, 1.5);
        assert!((p.get(4, 4) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(h.get(0, 0), 0.0);
    }

    #[test]
    fn coincident_positions_equal_one() {
        let a: Heatmap<f32> = project_positions(&[[3.2, 5.9]], 12, 9, 1.5);
        let b: Heatmap<f32> = project_positions(&[[3.2, 5.9], [3.2, 5.9]], 12, 9, 1.5);
        assert_eq!(a, b);
        let e: Heatmap<f32> = project_positions(&[], 12, 9, 1.5);
        assert!(e.values.iter().all(|&v| v == 0.0));
    }
}
