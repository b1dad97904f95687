use crate::error::ShapeError;
use crate::scalar::Real;

/// Row-major `height × width × channels` float image, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[T]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        if channels != 1 && channels != 3 {
            return Err(ShapeError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ShapeError::BadLength {
                width,
                height,
                channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape<U>(&self, other: &ImageBuffer<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape<U: Real>(&self, other: &ImageBuffer<U>) -> Result<(), ShapeError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ShapeError::Mismatch {
                expected: self.shape_string(),
                actual: other.shape_string(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.wide())).collect(),
        }
    }

    /// Replicates a single channel into RGB; RGB images are returned as is.
    pub fn to_rgb(&self) -> ImageBuffer<T> {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Per-pixel channel mean.
    pub fn luminance(&self) -> Vec<T> {
        let inv = T::one() / T::of_usize(self.channels);
        self.data
            .chunks_exact(self.channels)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect()
    }

    /// `size × size` crop anchored at `(floor((W−size)/2), floor((H−size)/2))`.
    pub fn center_crop(&self, size: usize) -> ImageBuffer<T> {
        let (x0, y0) = center_crop_offset(self.width, self.height, size);
        self.crop(x0, y0, size.min(self.width), size.min(self.height))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer<T> {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop outside image");
        ImageBuffer::from_fn(w, h, self.channels, |x, y, c| self.get(x0 + x, y0 + y, c))
    }

    /// Integer translation; pixels shifted in from outside are zero.
    pub fn translated(&self, dx: i64, dy: i64) -> ImageBuffer<T> {
        ImageBuffer::from_fn(self.width, self.height, self.channels, |x, y, c| {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize, c)
            } else {
                T::zero()
            }
        })
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// Offset of a centred `size × size` crop.
pub fn center_crop_offset(width: usize, height: usize, size: usize) -> (usize, usize) {
    (width.saturating_sub(size) / 2, height.saturating_sub(size) / 2)
}
