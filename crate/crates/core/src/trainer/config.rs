use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::networks::{hex, DiscriminatorSpec, GeneratorSpec};
use crate::nn::AdamConfig;

/// The four training conditions compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Attention-guided reconstruction and adversarial losses.
    #[serde(rename = "DEFAULT")]
    Default,
    /// Both losses without attention guidance.
    #[serde(rename = "R_PLUS_A")]
    RPlusA,
    /// Reconstruction loss only; no discriminator.
    #[serde(rename = "R_ONLY")]
    ROnly,
    /// From-scratch U-Net generator, reconstruction loss only by default.
    #[serde(rename = "UNET_SCRATCH")]
    UnetScratch,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Default, Ablation::RPlusA, Ablation::ROnly, Ablation::UnetScratch];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Default => "DEFAULT",
            Ablation::RPlusA => "R_PLUS_A",
            Ablation::ROnly => "R_ONLY",
            Ablation::UnetScratch => "UNET_SCRATCH",
        }
    }

    /// Row label in the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Default => "Default (R + A, guided)",
            Ablation::RPlusA => "R + A",
            Ablation::ROnly => "R",
            Ablation::UnetScratch => "U-Net",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected DEFAULT, R_PLUS_A, R_ONLY or UNET_SCRATCH)"))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every setting of a training run. The TOML config file uses these field
/// names as keys; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Weight of the adversarial term in the generator objective.
    pub lambda: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// One epoch is one pass over the train split.
    pub epochs: u64,
    pub batch_size: usize,
    /// Side of the square training crop.
    pub crop: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub manifest: Option<PathBuf>,
    /// VGG-16 encoder archive; without it the encoder starts from random
    /// weights.
    pub weights_archive: Option<PathBuf>,
    /// Checkpoints and the training log go here; `None` keeps everything in
    /// memory.
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Permits `lr_discriminator >= lr_generator` (with a warning).
    pub allow_discriminator_lr_override: bool,
    /// Feed the (masked) flash image to the discriminator as well.
    pub conditional_discriminator: bool,
    /// Train the U-Net condition with the adversarial term too.
    pub unet_adversarial: bool,
    /// Divides every network width; 1 is the full architecture.
    pub width_divisor: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda: 1.0,
            lr_generator: 2e-5,
            lr_discriminator: 2e-6,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 1000,
            batch_size: 1,
            crop: 224,
            seed: 0,
            ablation: Ablation::Default,
            manifest: None,
            weights_archive: None,
            output_dir: None,
            checkpoint_every: 50,
            allow_discriminator_lr_override: false,
            conditional_discriminator: false,
            unet_adversarial: false,
            width_divisor: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.weights_archive, &mut cfg.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Whether a discriminator is trained in this condition.
    pub fn adversarial(&self) -> bool {
        match self.ablation {
            Ablation::Default | Ablation::RPlusA => true,
            Ablation::ROnly => false,
            Ablation::UnetScratch => self.unet_adversarial,
        }
    }

    /// Whether the losses see attention-masked images.
    pub fn guided(&self) -> bool {
        match self.ablation {
            Ablation::Default => true,
            Ablation::RPlusA | Ablation::ROnly => false,
            Ablation::UnetScratch => self.unet_adversarial,
        }
    }

    /// λ actually applied: zero when there is no adversarial term.
    pub fn effective_lambda(&self) -> f64 {
        if self.adversarial() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        let spec = match self.ablation {
            Ablation::UnetScratch => GeneratorSpec::unet_scratch(),
            _ => GeneratorSpec::vgg16(self.weights_archive.is_some()),
        };
        spec.scaled(self.width_divisor)
    }

    pub fn discriminator_spec(&self) -> Option<DiscriminatorSpec> {
        self.adversarial().then(|| {
            let spec = if self.conditional_discriminator {
                DiscriminatorSpec::conditional()
            } else {
                DiscriminatorSpec::default()
            };
            spec.scaled(self.width_divisor)
        })
    }

    pub fn generator_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_generator, beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }

    pub fn discriminator_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_discriminator, ..self.generator_adam() }
    }

    /// SHA-256 of the settings that shape the optimization trajectory
    /// (everything except paths, epoch count and checkpoint cadence).
    pub fn trajectory_hash(&self) -> String {
        let core = RunConfig {
            epochs: 0,
            manifest: None,
            output_dir: None,
            checkpoint_every: 0,
            weights_archive: self.weights_archive.as_ref().map(|_| PathBuf::from("<archive>")),
            ..self.clone()
        };
        hex(&Sha256::digest(serde_json::to_vec(&core).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be at least 1".into());
        }
        let m = self.generator_spec().size_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return bad(format!("crop {} must be a positive multiple of {m}", self.crop));
        }
        if self.adversarial() && self.lr_discriminator >= self.lr_generator {
            if !self.allow_discriminator_lr_override {
                return bad(format!(
                    "lr_discriminator ({}) must be below lr_generator ({}); a discriminator learning as fast \
                     as the generator tends to diverge (set allow_discriminator_lr_override to force)",
                    self.lr_discriminator, self.lr_generator
                ));
            }
            log::warn!(
                "lr_discriminator ({}) >= lr_generator ({}); training may diverge",
                self.lr_discriminator,
                self.lr_generator
            );
        }
        if self.ablation == Ablation::UnetScratch && self.weights_archive.is_some() {
            log::warn!("UNET_SCRATCH trains from scratch; the weights archive is ignored");
        }
        Ok(())
    }
}
