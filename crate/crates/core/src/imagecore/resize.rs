use super::{clamp_unit, Image};
use crate::scalar::Scalar;

/// Long side of the canonical resolution.
pub const CANONICAL_LONG: usize = 320;
/// Short side of the canonical resolution.
pub const CANONICAL_SHORT: usize = 240;

/// Canonical `(height, width)` for an image of the given size: landscape
/// (width ≥ height) becomes 240×320 (h×w), portrait 320×240.
pub fn canonical_dims(height: usize, width: usize) -> (usize, usize) {
    if width >= height {
        (CANONICAL_SHORT, CANONICAL_LONG)
    } else {
        (CANONICAL_LONG, CANONICAL_SHORT)
    }
}

/// Resizes to the canonical resolution for the image's orientation.
pub fn resize_canonical<T: Scalar>(img: &Image<T>) -> Image<T> {
    let (h, w) = canonical_dims(img.height(), img.width());
    resize_bilinear(img, h, w)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Image<T>, height: usize, width: usize) -> Image<T> {
    assert!(height > 0 && width > 0, "target size must be positive");
    if img.height() == height && img.width() == width {
        return img.clone();
    }
    let rows = sample_positions(img.height(), height);
    let cols = sample_positions(img.width(), width);
    let c = img.channels();
    let mut data = Vec::with_capacity(height * width * c);
    for &(r0, r1, fr) in &rows {
        let fr = T::lit(fr);
        for &(c0, c1, fc) in &cols {
            let fc = T::lit(fc);
            for k in 0..c {
                let top = img.get(r0, c0, k) * (T::one() - fc) + img.get(r0, c1, k) * fc;
                let bottom = img.get(r1, c0, k) * (T::one() - fc) + img.get(r1, c1, k) * fc;
                data.push(clamp_unit(top * (T::one() - fr) + bottom * fr));
            }
        }
    }
    Image::from_raw(height, width, c, data)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let x = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}
