//! Pixel containers, the flash/ambient attention map, canonical resizing
//! and paired augmentation.
//!
//! Pixels live in `[0, 1]`; 8-bit files are divided by 255 on load. Images
//! are stored row-major in `(row, column, channel)` order.

mod attention;
mod augment;
mod io;
mod resize;

pub use attention::{apply_attention, attention_map};
pub use augment::{paired_augment, PairedAugmentation};
pub use io::{load_image, save_attention_png, save_png, to_rgb8};
pub use resize::{canonical_dims, resize_bilinear, resize_canonical, CANONICAL_LONG, CANONICAL_SHORT};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `height × width × channels` image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    /// Validates dimensions and that every value is finite and in `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidImage(format!("dimensions must be positive, got {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        check_unit_range(&data)?;
        Ok(Image { height, width, channels, data })
    }

    /// Builds an image from a per-element function; values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    data.push(clamp_unit(f(i, j, k)));
                }
            }
        }
        Image { height, width, channels, data }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self::from_fn(height, width, channels, |_, _, _| value)
    }

    /// Wraps data the caller has already proven to be in range.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Image { height, width, channels, data }
    }

    /// Clamps arbitrary (finite) values into `[0, 1]`, mapping NaN to 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let data = data.into_iter().map(clamp_unit).collect();
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn is_landscape(&self) -> bool {
        self.width >= self.height
    }

    pub fn flip_horizontal(&self) -> Self {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                data.extend_from_slice(px);
            }
        }
        Image::from_raw(self.height, self.width, c, data)
    }

    /// Copies the `height × width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::InvalidAugmentation(format!(
                "crop {height}x{width} at ({row}, {col}) does not fit a {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for i in row..row + height {
            let start = (i * self.width + col) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(Image::from_raw(height, width, c, data))
    }

    /// Pads to `height × width` by mirroring about the last row/column
    /// (edge pixel not repeated).
    pub fn pad_reflect(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width {
            return Err(Error::Shape("reflect padding cannot shrink an image".into()));
        }
        let reflect = |x: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let r = x % period;
            if r < n {
                r
            } else {
                period - r
            }
        };
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for i in 0..height {
            let si = reflect(i, self.height);
            for j in 0..width {
                let sj = reflect(j, self.width);
                let start = (si * self.width + sj) * c;
                data.extend_from_slice(&self.data[start..start + c]);
            }
        }
        Ok(Image::from_raw(height, width, c, data))
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        let data = self.data.iter().map(|&v| clamp_unit(U::lit(v.as_f64()))).collect();
        Image::from_raw(self.height, self.width, self.channels, data)
    }
}

/// Per-pixel weights in `[0, 1]`, broadcast over channels when applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> AttentionMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidImage(format!("attention map {height}x{width} with {} values", data.len())));
        }
        check_unit_range(&data)?;
        Ok(AttentionMap { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        AttentionMap { height, width, data: vec![T::one(); height * width] }
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<T>) -> Self {
        AttentionMap { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidAugmentation("attention crop out of bounds".into()));
        }
        let mut data = Vec::with_capacity(height * width);
        for i in row..row + height {
            data.extend_from_slice(&self.data[i * self.width + col..i * self.width + col + width]);
        }
        Ok(AttentionMap::from_raw(height, width, data))
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        AttentionMap::from_raw(self.height, self.width, data)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::one(), T::min)
    }
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

fn check_unit_range<T: Scalar>(data: &[T]) -> Result<()> {
    match data.iter().position(|v| !(v.is_finite() && *v >= T::zero() && *v <= T::one())) {
        Some(index) => Err(Error::Range { index, value: data[index].as_f64() }),
        None => Ok(()),
    }
}
