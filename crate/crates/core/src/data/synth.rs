//! Procedural flash/ambient pairs with known difference regions.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Category, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::imagecore::{save_png, Image};
use crate::scalar::Scalar;

/// Lowest and highest ambient intensity; keeps every flash effect visible.
pub const AMBIENT_RANGE: (f64, f64) = (0.2, 0.75);
/// Factor applied to the flash image inside shadow polygons.
pub const SHADOW_FACTOR: f64 = 0.2;

/// Radial flash brightening: gain `center_gain` at the image centre,
/// falling quadratically to `edge_gain` at the corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlashFalloff {
    pub center_gain: f64,
    pub edge_gain: f64,
}

impl Default for FlashFalloff {
    fn default() -> Self {
        FlashFalloff { center_gain: 1.8, edge_gain: 0.5 }
    }
}

impl FlashFalloff {
    /// Gain at normalized radius `r` (0 centre, 1 corner).
    pub fn gain(&self, r: f64) -> f64 {
        self.edge_gain + (self.center_gain - self.edge_gain) * (1.0 - r * r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Number of triangular hard shadows cast by the flash.
    pub shadow_polygons: usize,
    /// `None` disables the radial brightening.
    pub flash_falloff: Option<FlashFalloff>,
    /// Standard deviation of Gaussian sensor noise on the flash image.
    pub noise_level: f64,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        SynthSceneSpec {
            seed: 0,
            height: 240,
            width: 320,
            shadow_polygons: 3,
            flash_falloff: Some(FlashFalloff::default()),
            noise_level: 0.01,
        }
    }
}

impl SynthSceneSpec {
    /// A spec whose flash image equals its ambient image.
    pub fn degenerate(seed: u64, height: usize, width: usize) -> Self {
        SynthSceneSpec { seed, height, width, shadow_polygons: 0, flash_falloff: None, noise_level: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic scene needs a non-empty size".into()));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::Config("noise level must be finite and non-negative".into()));
        }
        if let Some(f) = self.flash_falloff {
            if !(f.center_gain.is_finite() && f.edge_gain.is_finite() && f.center_gain >= 0.0 && f.edge_gain >= 0.0) {
                return Err(Error::Config("flash gains must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// A synthetic pair plus the ground-truth shadow mask (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene<T> {
    pub flash: Image<T>,
    pub ambient: Image<T>,
    pub shadow_mask: Vec<bool>,
}

type Point = (f64, f64);

fn inside_triangle(p: Point, &[a, b, c]: &[Point; 3]) -> bool {
    let cross = |o: Point, u: Point, v: Point| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Generates a scene. Ambient light is a smooth field (a constant plus four
/// random low-frequency sinusoids, lightly tinted per channel); the flash
/// image multiplies it by the radial falloff, darkens it inside shadow
/// triangles, adds noise, and clips highlights to 1.
pub fn synth_scene<T: Scalar>(spec: &SynthSceneSpec) -> Result<SynthScene<T>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle = rng.random_range(0.0..TAU);
            let cycles = rng.random_range(0.5..3.0);
            let phase = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.03..0.08);
            (angle.cos() * cycles, angle.sin() * cycles, phase, amp)
        })
        .collect();
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.85..1.1));
    let shadows: Vec<[Point; 3]> = (0..spec.shadow_polygons)
        .map(|_| {
            let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
            let size = rng.random_range(0.15..0.35) * h.min(w) as f64;
            std::array::from_fn(|_| {
                let a = rng.random_range(0.0..TAU);
                let r = rng.random_range(0.5..1.0) * size;
                (cy + r * a.sin(), cx + r * a.cos())
            })
        })
        .collect();

    let mut shadow_mask = vec![false; h * w];
    let mut ambient = vec![T::zero(); h * w * 3];
    let mut flash = vec![T::zero(); h * w * 3];
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).expect("valid noise level");
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let r_max = (ch * ch + cw * cw).sqrt().max(f64::MIN_POSITIVE);
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
            let field =
                0.45 + waves.iter().map(|&(fy, fx, ph, amp)| amp * (TAU * (fy * y + fx * x) + ph).sin()).sum::<f64>();
            let p = (i as f64 + 0.5, j as f64 + 0.5);
            let shadow = shadows.iter().any(|t| inside_triangle(p, t));
            shadow_mask[i * w + j] = shadow;
            let r = ((i as f64 - ch).powi(2) + (j as f64 - cw).powi(2)).sqrt() / r_max;
            let gain = spec.flash_falloff.map_or(1.0, |f| f.gain(r)) * if shadow { SHADOW_FACTOR } else { 1.0 };
            for k in 0..3 {
                let a = (field * tint[k]).clamp(AMBIENT_RANGE.0, AMBIENT_RANGE.1);
                let mut f = a * gain;
                if spec.noise_level > 0.0 {
                    f += noise.sample(&mut rng);
                }
                ambient[(i * w + j) * 3 + k] = T::lit(a);
                flash[(i * w + j) * 3 + k] = T::lit(f.clamp(0.0, 1.0));
            }
        }
    }
    Ok(SynthScene { flash: Image::new(h, w, 3, flash)?, ambient: Image::new(h, w, 3, ambient)?, shadow_mask })
}

/// `(flash, ambient)` of [`synth_scene`].
pub fn synth_pair<T: Scalar>(spec: &SynthSceneSpec) -> Result<(Image<T>, Image<T>)> {
    let s = synth_scene(spec)?;
    Ok((s.flash, s.ambient))
}

/// Seed of pair `index` in a synthetic dataset.
pub fn pair_seed(base_seed: u64, index: u64) -> u64 {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    seed[16..24].copy_from_slice(b"synthpr\0");
    ChaCha8Rng::from_seed(seed).random()
}

/// Whether pair `index` falls in the test split for a given fraction; spreads
/// test pairs evenly and gives exactly `floor(count · fraction)` of them.
pub fn is_test_index(index: usize, fraction: f64) -> bool {
    let f = fraction.clamp(0.0, 1.0);
    ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
}

/// Writes `count` pairs as `flash/<id>.png` and `ambient/<id>.png` under
/// `dir` plus `dir/manifest.tsv`, and returns the manifest. Pair `i` uses
/// the base spec with seed [`pair_seed`]`(spec.seed, i)`.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &SynthSceneSpec,
    count: usize,
    test_fraction: f64,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} is outside [0, 1]")));
    }
    for sub in ["flash", "ambient"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let pair_id = format!("synth_{i:04}");
        let pair_spec = SynthSceneSpec { seed: pair_seed(spec.seed, i as u64), ..spec.clone() };
        let (flash, ambient) = synth_pair::<f64>(&pair_spec)?;
        let flash_path = dir.join("flash").join(format!("{pair_id}.png"));
        let ambient_path = dir.join("ambient").join(format!("{pair_id}.png"));
        save_png(&flash, &flash_path)?;
        save_png(&ambient, &ambient_path)?;
        entries.push(ManifestEntry {
            pair_id,
            flash_path,
            ambient_path,
            category: Category::ALL[i % Category::ALL.len()],
            split: if is_test_index(i, test_fraction) { Split::Test } else { Split::Train },
        });
    }
    let manifest = DatasetManifest::from_entries(entries)?;
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_text(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::attention_map;

    #[test]
    fn degenerate_spec_gives_identical_images() {
        let (f, a) = synth_pair::<f64>(&SynthSceneSpec::degenerate(3, 40, 50)).unwrap();
        assert_eq!(f, a);
        let m = attention_map(&a, &f).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn default_scene_has_known_difference_regions() {
        let spec = SynthSceneSpec { seed: 5, ..SynthSceneSpec::default() };
        let scene = synth_scene::<f64>(&spec).unwrap();
        let m = attention_map(&scene.ambient, &scene.flash).unwrap();
        let w = spec.width;
        let shadowed: Vec<usize> = (0..scene.shadow_mask.len()).filter(|&i| scene.shadow_mask[i]).collect();
        assert!(!shadowed.is_empty());
        assert!(shadowed.iter().all(|&i| m.as_slice()[i] < 0.9));
        let centre = (spec.height / 2) * w + w / 2;
        if !scene.shadow_mask[centre] {
            assert!(m.as_slice()[centre] < 0.9);
        }
        // Bright, dark and shadow phenomena all appear.
        let f = scene.flash.as_slice();
        assert!(f.contains(&1.0) || f.iter().any(|&v| v > 0.75));
        let corner_flash = scene.flash.get(0, 0, 0);
        assert!(corner_flash < scene.ambient.get(0, 0, 0));
    }

    #[test]
    fn same_seed_same_pair() {
        let spec = SynthSceneSpec { seed: 9, height: 32, width: 48, ..SynthSceneSpec::default() };
        assert_eq!(synth_scene::<f32>(&spec).unwrap(), synth_scene::<f32>(&spec).unwrap());
        let other = SynthSceneSpec { seed: 10, ..spec.clone() };
        assert_ne!(synth_pair::<f32>(&spec).unwrap(), synth_pair::<f32>(&other).unwrap());
    }

    #[test]
    fn test_split_assignment() {
        let tests = (0..10).filter(|&i| is_test_index(i, 0.2)).count();
        assert_eq!(tests, 2);
        assert!(!(0..5).any(|i| is_test_index(i, 0.0)));
        assert!((0..5).all(|i| is_test_index(i, 1.0)));
    }

    #[test]
    fn ambient_stays_in_band() {
        let scene = synth_scene::<f64>(&SynthSceneSpec { seed: 1, ..SynthSceneSpec::default() }).unwrap();
        assert!(scene.ambient.as_slice().iter().all(|&v| (AMBIENT_RANGE.0..=AMBIENT_RANGE.1).contains(&v)));
    }
}
