use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use super::{AttentionMap, Image};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Decodes a PNG or JPEG file into an RGB image scaled to `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let rgb = reader.decode().map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let inv = T::lit(1.0 / 255.0);
    let data = rgb.into_raw().into_iter().map(|v| T::lit(v as f64) * inv).collect();
    Image::from_clamped(h as usize, w as usize, 3, data)
}

/// Quantizes `round(255 · v)` per channel (rounding half away from zero).
pub fn to_rgb8<T: Scalar>(img: &Image<T>) -> Result<RgbImage> {
    if img.channels() != 3 {
        return Err(Error::InvalidImage(format!("expected 3 channels, got {}", img.channels())));
    }
    let data = img.as_slice().iter().map(|&v| quantize(v)).collect();
    Ok(RgbImage::from_raw(img.width() as u32, img.height() as u32, data).expect("buffer size matches"))
}

pub fn save_png<T: Scalar>(img: &Image<T>, path: &Path) -> Result<()> {
    to_rgb8(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes the map as a single-channel 8-bit PNG with value `round(255 · m)`.
pub fn save_attention_png<T: Scalar>(map: &AttentionMap<T>, path: &Path) -> Result<()> {
    let data = map.as_slice().iter().map(|&v| quantize(v)).collect();
    GrayImage::from_raw(map.width() as u32, map.height() as u32, data)
        .expect("buffer size matches")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::<f64>::from_fn(5, 7, 3, |i, j, k| ((i * 31 + j * 7 + k * 3) % 256) as f64 / 255.0);
        save_png(&img, &path).unwrap();
        let back: Image<f64> = load_image(&path).unwrap();
        assert_eq!(back.dims(), (5, 7, 3));
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_file_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        let err = load_image::<f32>(&path).unwrap_err();
        assert!(err.is_data_error(), "{err}");
        let missing = load_image::<f32>(&dir.path().join("none.png")).unwrap_err();
        assert!(missing.is_data_error());
    }
}
