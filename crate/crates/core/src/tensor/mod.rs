//! Dense row-major 2-D maps and channel-last 3-D stacks.
//!
//! Every explainer in this crate speaks in terms of [`Map2D`] (one value per
//! pixel) and [`Stack3D`] (a fixed number of channels per pixel, stored
//! interleaved). Both are generic over the element type so that numerically
//! sensitive code (training, gradient checks) can run in `f64` while exported
//! tensors stay in `f32`. Sums are always accumulated in `f64`.

mod kernels;

pub use kernels::{
    area_normalize, convolve_same, convolve_separable, gaussian_kernel, max_min_normalize,
    piecewise_linear, resize_bilinear, resize_bilinear_transpose, GaussianKernelSpec,
    DEFAULT_EPSILON,
};

use std::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

/// Errors raised when constructing or combining tensors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimensions must be at least 1x1 (got {height}x{width})")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} values for the given shape, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("kernel side lengths must be odd (got {height}x{width})")]
    EvenKernel { height: usize, width: usize },
    #[error("channel count must be at least 1")]
    NoChannels,
    #[error("invalid kernel: {0}")]
    InvalidKernel(&'static str),
}

/// Floating point element stored in maps and stacks.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    fn as_f64(self) -> f64;
    fn from_f64(value: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
}

impl Element for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
}

/// Common access to the flat value buffer of a dense tensor.
pub trait Dense<T: Element>: Clone {
    fn values(&self) -> &[T];
    fn values_mut(&mut self) -> &mut [T];

    /// Applies `f` to every element, keeping the shape.
    fn map_elements(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        out.values_mut().iter_mut().for_each(|v| *v = f(*v));
        out
    }

    fn sum(&self) -> f64 {
        self.values().iter().map(|v| v.as_f64()).sum()
    }
}

fn check_finite<T: Element>(values: &[T]) -> Result<(), TensorError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Single-channel spatial map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2D<T: Element = f32> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Element> Map2D<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::EmptyShape { height, width });
        }
        if values.len() != height * width {
            return Err(TensorError::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a map from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        assert!(
            rows.iter().all(|r| r.as_ref().len() == width),
            "ragged rows"
        );
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(height, width, values).expect("valid literal map")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "maps must be at least 1x1");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "maps must be at least 1x1");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.values[row * self.width + col] = value;
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn min_max(&self) -> (T, T) {
        self.values.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn cast<U: Element>(&self) -> Map2D<U> {
        Map2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map_elements(|v| v * factor)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                left: (self.height, self.width, 1),
                right: (other.height, other.width, 1),
            });
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn relu(&self) -> Self {
        self.map_elements(|v| v.max(T::zero()))
    }
}

impl<T: Element> Dense<T> for Map2D<T> {
    fn values(&self) -> &[T] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

/// Multi-channel spatial tensor, channel-last (`values[(r * w + c) * ch + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Stack3D<T: Element = f32> {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Element> Stack3D<T> {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<T>,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::EmptyShape { height, width });
        }
        if channels == 0 {
            return Err(TensorError::NoChannels);
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![T::zero(); height * width * channels])
            .expect("non-empty zero stack")
    }

    /// Interleaves equally shaped channel maps.
    pub fn from_channels(channels: &[Map2D<T>]) -> Result<Self, TensorError> {
        let first = channels.first().ok_or(TensorError::NoChannels)?;
        let (h, w) = first.shape();
        let n = channels.len();
        let mut values = vec![T::zero(); h * w * n];
        for (k, ch) in channels.iter().enumerate() {
            if ch.shape() != (h, w) {
                return Err(TensorError::ShapeMismatch {
                    left: (h, w, 1),
                    right: (ch.height(), ch.width(), 1),
                });
            }
            for (p, &v) in ch.values().iter().enumerate() {
                values[p * n + k] = v;
            }
        }
        Ok(Self {
            height: h,
            width: w,
            channels: n,
            values,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: T) {
        self.values[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn channel(&self, k: usize) -> Map2D<T> {
        assert!(k < self.channels, "channel {k} out of range");
        Map2D {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .skip(k)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    pub fn to_channels(&self) -> Vec<Map2D<T>> {
        (0..self.channels).map(|k| self.channel(k)).collect()
    }

    pub fn cast<U: Element>(&self) -> Stack3D<U> {
        Stack3D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Bilinearly resizes every channel.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        if (out_h, out_w) == (self.height, self.width) {
            return self.clone();
        }
        let resized: Vec<Map2D<T>> = self
            .to_channels()
            .iter()
            .map(|ch| resize_bilinear(ch, out_h, out_w))
            .collect();
        Self::from_channels(&resized).expect("resized channels share a shape")
    }
}

impl<T: Element> Dense<T> for Stack3D<T> {
    fn values(&self) -> &[T] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Map2D::<f32>::new(0, 3, vec![]),
            Err(TensorError::EmptyShape { .. })
        ));
        assert!(matches!(
            Map2D::<f32>::new(2, 2, vec![1.0; 3]),
            Err(TensorError::LengthMismatch { expected: 4, actual: 3 })
        ));
        assert!(matches!(
            Map2D::<f32>::new(1, 2, vec![1.0, f32::NAN]),
            Err(TensorError::NonFinite { index: 1 })
        ));
        assert!(matches!(
            Stack3D::<f32>::new(1, 1, 0, vec![]),
            Err(TensorError::NoChannels)
        ));
    }

    #[test]
    fn channel_last_layout() {
        let a = Map2D::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]);
        let b = Map2D::from_rows(&[[10.0f32, 20.0], [30.0, 40.0]]);
        let s = Stack3D::from_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.values(), &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        assert_eq!(s.get(1, 0, 1), 30.0);
        assert_eq!(s.channel(0), a);
        assert_eq!(s.channel(1), b);
    }
}
