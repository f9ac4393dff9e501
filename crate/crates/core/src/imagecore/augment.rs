use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry applied identically to both images of a pair: a square crop
/// followed by an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedAugmentation {
    /// `(row, col)` of the crop's top-left corner.
    pub crop_origin: (usize, usize),
    pub crop_size: usize,
    pub hflip: bool,
    /// Seed of the stream the parameters were drawn from.
    pub rng_seed: u64,
}

impl PairedAugmentation {
    /// Full-frame crop with no flip.
    pub fn identity(height: usize, width: usize) -> Self {
        assert_eq!(height, width, "identity augmentation needs a square image");
        PairedAugmentation { crop_origin: (0, 0), crop_size: height, hflip: false, rng_seed: 0 }
    }

    /// Seed of the augmentation stream for one sample of one epoch.
    pub fn derive_seed(global_seed: u64, epoch: u64, index: u64) -> u64 {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&global_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&epoch.to_le_bytes());
        seed[16..24].copy_from_slice(&index.to_le_bytes());
        seed[24..].copy_from_slice(b"augment\0");
        ChaCha8Rng::from_seed(seed).random()
    }

    /// Draws a uniformly placed crop and a fair flip for a `height × width` frame.
    pub fn sample(height: usize, width: usize, crop_size: usize, rng_seed: u64) -> Result<Self> {
        if crop_size == 0 || crop_size > height || crop_size > width {
            return Err(Error::InvalidAugmentation(format!(
                "crop of {crop_size} does not fit a {height}x{width} image"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let row = rng.random_range(0..=height - crop_size);
        let col = rng.random_range(0..=width - crop_size);
        let hflip = rng.random_bool(0.5);
        Ok(PairedAugmentation { crop_origin: (row, col), crop_size, hflip, rng_seed })
    }

    pub fn for_sample(
        height: usize,
        width: usize,
        crop_size: usize,
        global_seed: u64,
        epoch: u64,
        index: u64,
    ) -> Result<Self> {
        Self::sample(height, width, crop_size, Self::derive_seed(global_seed, epoch, index))
    }

    pub fn apply<T: Scalar>(&self, img: &Image<T>) -> Result<Image<T>> {
        let (row, col) = self.crop_origin;
        let out = img.crop(row, col, self.crop_size, self.crop_size)?;
        Ok(if self.hflip { out.flip_horizontal() } else { out })
    }
}

/// Crops and flips a flash/ambient pair with the same geometry.
pub fn paired_augment<T: Scalar>(
    flash: &Image<T>,
    ambient: &Image<T>,
    aug: &PairedAugmentation,
) -> Result<(Image<T>, Image<T>)> {
    if flash.dims() != ambient.dims() {
        return Err(Error::InvalidPair(format!("flash is {:?} but ambient is {:?}", flash.dims(), ambient.dims())));
    }
    Ok((aug.apply(flash)?, aug.apply(ambient)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::attention_map;

    fn ramp(h: usize, w: usize, offset: usize) -> Image<f64> {
        Image::from_fn(h, w, 3, |i, j, k| ((i * 7 + j * 3 + k + offset) % 11) as f64 / 10.0)
    }

    #[test]
    fn identity_leaves_pair_unchanged() {
        let (f, a) = (ramp(8, 8, 0), ramp(8, 8, 4));
        let (f2, a2) = paired_augment(&f, &a, &PairedAugmentation::identity(8, 8)).unwrap();
        assert_eq!((f2, a2), (f, a));
    }

    #[test]
    fn flip_is_an_involution() {
        let f = ramp(10, 12, 1);
        let aug = PairedAugmentation { crop_origin: (1, 2), crop_size: 6, hflip: true, rng_seed: 0 };
        let once = aug.apply(&f).unwrap();
        let twice = once.flip_horizontal();
        let plain = PairedAugmentation { hflip: false, ..aug }.apply(&f).unwrap();
        assert_eq!(twice, plain);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let (f, a) = (ramp(30, 40, 0), ramp(30, 40, 5));
        let aug1 = PairedAugmentation::for_sample(30, 40, 16, 9, 3, 17).unwrap();
        let aug2 = PairedAugmentation::for_sample(30, 40, 16, 9, 3, 17).unwrap();
        assert_eq!(aug1, aug2);
        assert_eq!(paired_augment(&f, &a, &aug1).unwrap(), paired_augment(&f, &a, &aug2).unwrap());
        let other = PairedAugmentation::for_sample(30, 40, 16, 9, 4, 17).unwrap();
        assert_ne!(aug1.rng_seed, other.rng_seed);
    }

    #[test]
    fn out_of_bounds_crop_rejected() {
        let f = ramp(8, 8, 0);
        let aug = PairedAugmentation { crop_origin: (4, 0), crop_size: 6, hflip: false, rng_seed: 0 };
        assert!(matches!(paired_augment(&f, &f, &aug), Err(Error::InvalidAugmentation(_))));
        assert!(PairedAugmentation::sample(8, 8, 9, 0).is_err());
    }

    #[test]
    fn augmentation_commutes_with_attention() {
        let (f, a) = (ramp(20, 24, 2), ramp(20, 24, 9));
        for seed in 0..20 {
            let aug = PairedAugmentation::sample(20, 24, 12, seed).unwrap();
            let (fc, ac) = paired_augment(&f, &a, &aug).unwrap();
            let after = attention_map(&ac, &fc).unwrap();
            let full = attention_map(&a, &f).unwrap();
            let (r, c) = aug.crop_origin;
            let mut before = full.crop(r, c, 12, 12).unwrap();
            if aug.hflip {
                before = before.flip_horizontal();
            }
            assert_eq!(after, before);
        }
    }
}
