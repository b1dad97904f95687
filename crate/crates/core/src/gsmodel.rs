//! Gaussian primitives and the covariance math behind them.
//!
//! A primitive stores its centre in continuous pixel coordinates (pixel
//! centres sit at `i + 0.5`), two log-space scales, a rotation angle and an
//! RGB colour. The covariance is always built through the rotation-scaling
//! factorisation `Σ = R(θ) S Sᵀ R(θ)ᵀ`, so it is positive definite as long as
//! the exponentiated scales stay inside [`ScaleBounds`].

use crate::scalar::Real;

/// Default support cutoff, in standard deviations.
pub const DEFAULT_CUTOFF: f64 = 3.0;
/// Smallest admissible scale, in pixels.
pub const MIN_SCALE_PX: f64 = 0.3;

/// One anisotropic 2D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D<T> {
    /// Centre `(x, y)` in continuous pixel units.
    pub mu: [T; 2],
    /// Log-space scales `(ln s_x, ln s_y)`.
    pub log_s: [T; 2],
    /// Rotation angle in radians.
    pub theta: T,
    /// RGB colour in `[0, 1]`.
    pub color: [T; 3],
}

impl<T: Real> Gaussian2D<T> {
    pub fn new(mu: [T; 2], log_s: [T; 2], theta: T, color: [T; 3]) -> Self {
        Self {
            mu,
            log_s,
            theta,
            color,
        }
    }

    /// Isotropic Gaussian with standard deviation `sigma` pixels.
    pub fn isotropic(mu: [T; 2], sigma: T, color: [T; 3]) -> Self {
        let ls = sigma.ln();
        Self::new(mu, [ls, ls], T::zero(), color)
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.log_s.iter().all(|v| v.is_finite())
            && self.theta.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }

    /// Lossless precision conversion through `f64`.
    pub fn cast<U: Real>(&self) -> Gaussian2D<U> {
        let c = |v: T| U::of(v.wide());
        Gaussian2D {
            mu: self.mu.map(c),
            log_s: self.log_s.map(c),
            theta: c(self.theta),
            color: self.color.map(c),
        }
    }
}

/// Admissible range for exponentiated scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBounds<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> ScaleBounds<T> {
    /// `[0.3 px, 0.5·max(W, H) px]`.
    pub fn for_image(width: usize, height: usize) -> Self {
        let extent = width.max(height).max(1) as f64;
        Self {
            min: T::of(MIN_SCALE_PX),
            max: T::of((0.5 * extent).max(MIN_SCALE_PX)),
        }
    }

    /// Bounds that never bind in practice; used where no image is in scope.
    pub fn unbounded() -> Self {
        Self {
            min: T::min_positive_value().sqrt(),
            max: T::max_value().sqrt().sqrt(),
        }
    }

    pub fn log_min(&self) -> T {
        self.min.ln()
    }

    pub fn log_max(&self) -> T {
        self.max.ln()
    }

    /// Exponentiates a log-scale and clamps it. The flag is `true` when the
    /// clamp was active (the scale then carries no gradient).
    #[inline]
    pub fn scale(&self, log_s: T) -> (T, bool) {
        let s = log_s.exp();
        if s < self.min {
            (self.min, true)
        } else if s > self.max {
            (self.max, true)
        } else {
            (s, false)
        }
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]` in pixels².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2x2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Real> Covariance2x2<T> {
    pub fn det(&self) -> T {
        self.a * self.c - self.b * self.b
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > T::zero() && self.det() > T::zero()
    }

    /// Inverse, which is again symmetric (the "conic" of the Gaussian).
    pub fn inverse(&self) -> Covariance2x2<T> {
        let inv_det = T::one() / self.det();
        Covariance2x2 {
            a: self.c * inv_det,
            b: -self.b * inv_det,
            c: self.a * inv_det,
        }
    }

    /// Quadratic form `dᵀ M d`.
    #[inline]
    pub fn quad(&self, dx: T, dy: T) -> T {
        self.a * dx * dx + (self.b + self.b) * dx * dy + self.c * dy * dy
    }
}

/// `Σ = R(θ) diag(s_x², s_y²) R(θ)ᵀ` with `s = clamp(exp(log_s))`.
pub fn covariance_from_rs<T: Real>(log_s: [T; 2], theta: T, bounds: &ScaleBounds<T>) -> Covariance2x2<T> {
    let (sx, _) = bounds.scale(log_s[0]);
    let (sy, _) = bounds.scale(log_s[1]);
    covariance_from_scales(sx, sy, theta)
}

#[inline]
pub(crate) fn covariance_from_scales<T: Real>(sx: T, sy: T, theta: T) -> Covariance2x2<T> {
    let (sin, cos) = theta.sin_cos();
    let vx = sx * sx;
    let vy = sy * sy;
    Covariance2x2 {
        a: cos * cos * vx + sin * sin * vy,
        b: cos * sin * (vx - vy),
        c: sin * sin * vx + cos * cos * vy,
    }
}

/// `exp(-½ (x−μ)ᵀ Σ⁻¹ (x−μ))`, no support cutoff applied.
pub fn gaussian_weight<T: Real>(g: &Gaussian2D<T>, x: [T; 2], bounds: &ScaleBounds<T>) -> T {
    let conic = covariance_from_rs(g.log_s, g.theta, bounds).inverse();
    let q = conic.quad(x[0] - g.mu[0], x[1] - g.mu[1]);
    (-q * T::of(0.5)).exp()
}

/// Inclusive integer pixel rectangle. Empty when `x0 > x1` or `y0 > y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    pub const EMPTY: PixelRect = PixelRect {
        x0: 0,
        y0: 0,
        x1: -1,
        y1: -1,
    };

    pub fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn width(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0 + 1) as usize
        }
    }

    pub fn height(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.y1 - self.y0 + 1) as usize
        }
    }
}

/// Bounding box of the `cutoff`-σ ellipse, clipped to a `width × height`
/// image.
///
/// A pixel with centre `p` whose weight is at least `exp(-cutoff²/2)` has
/// `|p_x − μ_x| ≤ cutoff·√Σ_xx`, so it always falls inside this box.
pub fn gaussian_support_bbox<T: Real>(
    g: &Gaussian2D<T>,
    cutoff: T,
    width: usize,
    height: usize,
    bounds: &ScaleBounds<T>,
) -> PixelRect {
    let cov = covariance_from_rs(g.log_s, g.theta, bounds);
    support_rect(g.mu, &cov, cutoff, width, height)
}

pub(crate) fn support_rect<T: Real>(
    mu: [T; 2],
    cov: &Covariance2x2<T>,
    cutoff: T,
    width: usize,
    height: usize,
) -> PixelRect {
    if width == 0 || height == 0 {
        return PixelRect::EMPTY;
    }
    let rx = cutoff * cov.a.sqrt();
    let ry = cutoff * cov.c.sqrt();
    let lo = |v: T| v.floor().to_i64().unwrap_or(i64::MIN / 2);
    let hi = |v: T| v.floor().to_i64().unwrap_or(i64::MAX / 2);
    let x0 = lo(mu[0] - rx).max(0);
    let y0 = lo(mu[1] - ry).max(0);
    let x1 = hi(mu[0] + rx).min(width as i64 - 1);
    let y1 = hi(mu[1] + ry).min(height as i64 - 1);
    let r = PixelRect { x0, y0, x1, y1 };
    if r.is_empty() {
        PixelRect::EMPTY
    } else {
        r
    }
}

/// An ordered collection of primitives representing one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet<T> {
    pub gaussians: Vec<Gaussian2D<T>>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> GaussianSet<T> {
    pub fn new(width: usize, height: usize, gaussians: Vec<Gaussian2D<T>>) -> Self {
        Self {
            gaussians,
            width,
            height,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn scale_bounds(&self) -> ScaleBounds<T> {
        ScaleBounds::for_image(self.width, self.height)
    }

    /// Largest representable coordinate strictly below the image extent.
    pub fn position_upper(&self) -> [T; 2] {
        let below = |n: usize| {
            let e = T::of_usize(n.max(1));
            e - e * T::epsilon() * T::of(4.0)
        };
        [below(self.width), below(self.height)]
    }

    /// Clamps positions into `[0, W)×[0, H)`, log-scales into the scale
    /// bounds and colours into `[0, 1]`. Non-finite values are replaced by
    /// the nearest valid default.
    pub fn clamp_in_place(&mut self) {
        let bounds = self.scale_bounds();
        let (lmin, lmax) = (bounds.log_min(), bounds.log_max());
        let upper = self.position_upper();
        for g in &mut self.gaussians {
            for (axis, m) in g.mu.iter_mut().enumerate() {
                *m = finite_or(*m, T::zero()).max(T::zero()).min(upper[axis]);
            }
            for l in &mut g.log_s {
                *l = finite_or(*l, lmin).max(lmin).min(lmax);
            }
            g.theta = finite_or(g.theta, T::zero());
            for c in &mut g.color {
                *c = finite_or(*c, T::zero()).max(T::zero()).min(T::one());
            }
        }
    }

    /// Checks every invariant that a clamped set must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        let upper = self.position_upper();
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(format!("gaussian {i} has non-finite parameters"));
            }
            for axis in 0..2 {
                let m = g.mu[axis];
                if m < T::zero() || m > upper[axis] {
                    let extent = if axis == 0 { self.width } else { self.height };
                    return Err(format!(
                        "gaussian {i} position {} = {m} outside [0, {extent})",
                        ["x", "y"][axis]
                    ));
                }
            }
            if g.color.iter().any(|&c| c < T::zero() || c > T::one()) {
                return Err(format!("gaussian {i} colour outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<[T; 2]> {
        self.gaussians.iter().map(|g| g.mu).collect()
    }

    pub fn cast<U: Real>(&self) -> GaussianSet<U> {
        GaussianSet {
            gaussians: self.gaussians.iter().map(|g| g.cast()).collect(),
            width: self.width,
            height: self.height,
        }
    }

    /// Flattens into `[mu_x, mu_y, ls_x, ls_y, theta, r, g, b]` per primitive.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * PARAMS_PER_GAUSSIAN);
        for g in &self.gaussians {
            out.extend_from_slice(&g.mu);
            out.extend_from_slice(&g.log_s);
            out.push(g.theta);
            out.extend_from_slice(&g.color);
        }
        out
    }

    /// Inverse of [`GaussianSet::to_flat`]. Panics when the length is not a
    /// multiple of [`PARAMS_PER_GAUSSIAN`].
    pub fn from_flat(width: usize, height: usize, flat: &[T]) -> Self {
        assert_eq!(flat.len() % PARAMS_PER_GAUSSIAN, 0);
        let gaussians = flat
            .chunks_exact(PARAMS_PER_GAUSSIAN)
            .map(|p| Gaussian2D::new([p[0], p[1]], [p[2], p[3]], p[4], [p[5], p[6], p[7]]))
            .collect();
        Self::new(width, height, gaussians)
    }
}

/// Number of scalars per primitive in flat layouts and on disk.
pub const PARAMS_PER_GAUSSIAN: usize = 8;

#[inline]
fn finite_or<T: Real>(v: T, fallback: T) -> T {
    if v.is_finite() {
        v
    } else {
        fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn wide() -> ScaleBounds<f64> {
        ScaleBounds::unbounded()
    }

    #[test]
    fn axis_aligned_covariance_is_diagonal_of_squares() {
        let cov = covariance_from_rs([3.0f64.ln(), 0.5f64.ln()], 0.0, &wide());
        assert_relative_eq!(cov.a, 9.0, max_relative = 1e-14);
        assert_relative_eq!(cov.b, 0.0);
        assert_relative_eq!(cov.c, 0.25, max_relative = 1e-14);
    }

    #[test]
    fn rotated_covariance_matches_explicit_product() {
        // R(π/4) diag(4, 1) R(π/4)ᵀ written out by hand.
        let (s, c) = FRAC_PI_4.sin_cos();
        let r = [[c, -s], [s, c]];
        let d = [4.0, 1.0];
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    m[i][j] += r[i][k] * d[k] * r[j][k];
                }
            }
        }
        let cov = covariance_from_rs([2f64.ln(), 0.0], FRAC_PI_4, &wide());
        assert_relative_eq!(cov.a, m[0][0], max_relative = 1e-12);
        assert_relative_eq!(cov.b, m[0][1], max_relative = 1e-12);
        assert_relative_eq!(cov.c, m[1][1], max_relative = 1e-12);
        assert_relative_eq!(cov.a, 2.5, max_relative = 1e-12);
        assert_relative_eq!(cov.b, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn weight_is_one_at_centre_and_exp_half_at_one_sigma() {
        let g = Gaussian2D::isotropic([5.0, 7.0], 2.0f64, [0.5; 3]);
        let b = wide();
        assert_eq!(gaussian_weight(&g, [5.0, 7.0], &b), 1.0);
        assert_relative_eq!(
            gaussian_weight(&g, [7.0, 7.0], &b),
            (-0.5f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(gaussian_weight(&g, [7.0, 7.0], &b), 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn anisotropic_weight_matches_direct_inverse() {
        let g = Gaussian2D::new([0.0, 0.0], [2f64.ln(), 0.0], FRAC_PI_4, [0.0; 3]);
        // Σ = [[2.5, 1.5], [1.5, 2.5]], det = 4, Σ⁻¹ = [[2.5, −1.5], [−1.5, 2.5]] / 4.
        let q: f64 = 2.5 / 4.0;
        let expected = (-0.5 * q).exp();
        assert_relative_eq!(gaussian_weight(&g, [1.0, 0.0], &wide()), expected, max_relative = 1e-13);
    }

    #[test]
    fn bbox_for_isotropic_gaussian() {
        let g = Gaussian2D::isotropic([32.0, 32.0], 2.0f64, [0.0; 3]);
        let r = gaussian_support_bbox(&g, 3.0, 64, 64, &ScaleBounds::for_image(64, 64));
        assert_eq!(
            r,
            PixelRect {
                x0: 26,
                y0: 26,
                x1: 38,
                y1: 38
            }
        );
    }

    #[test]
    fn bbox_outside_image_is_empty() {
        let g = Gaussian2D::isotropic([-20.0, 10.0], 1.0f64, [0.0; 3]);
        let r = gaussian_support_bbox(&g, 3.0, 16, 16, &ScaleBounds::for_image(16, 16));
        assert!(r.is_empty());
        let g = Gaussian2D::isotropic([10.0, 40.0], 1.0f64, [0.0; 3]);
        assert!(gaussian_support_bbox(&g, 3.0, 16, 16, &ScaleBounds::for_image(16, 16)).is_empty());
    }

    #[test]
    fn rotated_bbox_contains_all_pixels_above_threshold() {
        let b = ScaleBounds::for_image(48, 48);
        let g = Gaussian2D::new([20.3, 25.7], [6f64.ln(), 1.2f64.ln()], 0.7, [0.0; 3]);
        let r = gaussian_support_bbox(&g, 3.0, 48, 48, &b);
        let cov = covariance_from_rs(g.log_s, g.theta, &b);
        assert_relative_eq!((r.x1 - r.x0) as f64, (2.0 * 3.0 * cov.a.sqrt()).floor(), epsilon = 1.0);
        let thresh = (-4.5f64).exp();
        for y in 0..48 {
            for x in 0..48 {
                let w = gaussian_weight(&g, [x as f64 + 0.5, y as f64 + 0.5], &b);
                if w >= thresh {
                    assert!(r.contains(x, y), "pixel ({x},{y}) w={w} outside {r:?}");
                }
            }
        }
    }

    #[test]
    fn clamping_enforces_set_invariants() {
        let mut set = GaussianSet::new(
            10,
            8,
            vec![Gaussian2D::new(
                [12.0f32, -1.0],
                [-5.0, 9.0],
                f32::NAN,
                [1.5, -0.1, 0.3],
            )],
        );
        assert!(set.validate().is_err());
        set.clamp_in_place();
        set.validate().unwrap();
        let g = set.gaussians[0];
        assert!(g.mu[0] < 10.0 && g.mu[1] == 0.0);
        assert_relative_eq!(g.log_s[0].exp(), 0.3, max_relative = 1e-5);
        assert_relative_eq!(g.log_s[1].exp(), 5.0, max_relative = 1e-5);
        assert_eq!(g.theta, 0.0);
        assert_eq!(g.color, [1.0, 0.0, 0.3]);
    }

    #[test]
    fn flat_layout_round_trips() {
        let set = GaussianSet::new(
            4,
            4,
            vec![Gaussian2D::new([1.0f64, 2.0], [0.1, 0.2], 0.3, [0.4, 0.5, 0.6])],
        );
        let flat = set.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(GaussianSet::from_flat(4, 4, &flat), set);
    }

    proptest! {
        #[test]
        fn covariance_symmetric_positive_definite(
            lx in -3.0f64..4.0, ly in -3.0f64..4.0, theta in -10.0f64..10.0
        ) {
            let cov = covariance_from_rs([lx, ly], theta, &ScaleBounds::for_image(128, 128));
            prop_assert!(cov.is_positive_definite());
        }

        #[test]
        fn covariance_is_pi_periodic(lx in -1.0f64..3.0, ly in -1.0f64..3.0, theta in -4.0f64..4.0) {
            let b = wide();
            let c0 = covariance_from_rs([lx, ly], theta, &b);
            let c1 = covariance_from_rs([lx, ly], theta + PI, &b);
            let scale = c0.a.abs().max(c0.c.abs());
            prop_assert!((c0.a - c1.a).abs() <= 1e-12 * scale);
            prop_assert!((c0.b - c1.b).abs() <= 1e-12 * scale);
            prop_assert!((c0.c - c1.c).abs() <= 1e-12 * scale);
        }

        #[test]
        fn axis_swap_identity(lx in -1.0f64..3.0, ly in -1.0f64..3.0, theta in -4.0f64..4.0) {
            let b = wide();
            let c0 = covariance_from_rs([lx, ly], theta, &b);
            let c1 = covariance_from_rs([ly, lx], theta + FRAC_PI_2, &b);
            let scale = c0.a.abs().max(c0.c.abs());
            prop_assert!((c0.a - c1.a).abs() <= 1e-12 * scale);
            prop_assert!((c0.b - c1.b).abs() <= 1e-12 * scale);
            prop_assert!((c0.c - c1.c).abs() <= 1e-12 * scale);
        }

        #[test]
        fn isotropic_weight_ignores_rotation(
            ls in -1.0f64..2.5, theta in -4.0f64..4.0, dx in -5.0f64..5.0, dy in -5.0f64..5.0
        ) {
            let b = wide();
            let g0 = Gaussian2D::new([0.0, 0.0], [ls, ls], 0.0, [0.0; 3]);
            let g1 = Gaussian2D::new([0.0, 0.0], [ls, ls], theta, [0.0; 3]);
            let w0 = gaussian_weight(&g0, [dx, dy], &b);
            let w1 = gaussian_weight(&g1, [dx, dy], &b);
            prop_assert!((w0 - w1).abs() <= 1e-12 * w0.max(1e-300));
        }
    }
}
