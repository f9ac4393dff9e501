//! Guided reconstruction loss, adversarial objectives and the weighted
//! generator objective.
//!
//! Adversarial losses are evaluated on discriminator logits with
//! `log σ(x) = -softplus(-x)`, which is exact for probabilities in `(0, 1)`
//! and never takes `log(0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Scalar;

/// Discriminator outputs for a batch, one score per patch, stored as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores<T> {
    logits: Vec<T>,
}

impl<T: Scalar> PatchScores<T> {
    pub fn from_logits(logits: Vec<T>) -> Self {
        PatchScores { logits }
    }

    /// Converts probabilities to logits. Values must lie in `[0, 1]`; the
    /// endpoints map to infinite logits, which the losses reject.
    pub fn from_probabilities(probs: &[T]) -> Result<Self> {
        let logits = probs
            .iter()
            .map(|&p| {
                if !(p >= T::zero() && p <= T::one()) {
                    return Err(Error::Numeric(format!("probability {p} outside [0, 1]")));
                }
                Ok(p.ln() - (T::one() - p).ln())
            })
            .collect::<Result<_>>()?;
        Ok(PatchScores { logits })
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.logits.iter().map(|&x| sigmoid(x)).collect()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.logits.is_empty() {
            return Err(Error::Numeric(format!("{what}: no scores")));
        }
        if let Some(v) = self.logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{what}: non-finite score logit {v}")));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Mean absolute difference between two (already masked) images.
pub fn reconstruction_loss<T: Scalar>(ambient_masked: &Image<T>, output_masked: &Image<T>) -> Result<T> {
    if ambient_masked.dims() != output_masked.dims() {
        return Err(Error::InvalidPair(format!(
            "ambient is {:?} but output is {:?}",
            ambient_masked.dims(),
            output_masked.dims()
        )));
    }
    Ok(l1_mean(ambient_masked.as_slice(), output_masked.as_slice()))
}

/// `mean |target - pred|`.
pub fn l1_mean<T: Scalar>(target: &[T], pred: &[T]) -> T {
    assert_eq!(target.len(), pred.len());
    let sum: T = target.iter().zip(pred).map(|(&a, &b)| (a - b).abs()).sum();
    sum / T::lit(target.len() as f64)
}

/// Gradient of [`l1_mean`] with respect to `pred` (`0` where they agree).
pub fn l1_mean_grad<T: Scalar>(target: &[T], pred: &[T]) -> Vec<T> {
    let inv = T::one() / T::lit(target.len() as f64);
    target.iter().zip(pred).map(|(&a, &b)| sign(b - a) * inv).collect()
}

/// Reconstruction loss after masking both entries with `mask` (same length
/// as the images, already broadcast over channels), together with its
/// gradient with respect to the raw, unmasked output.
///
/// Where the mask is zero the gradient is exactly zero.
pub fn guided_reconstruction<T: Scalar>(ambient: &[T], output: &[T], mask: &[T]) -> (T, Vec<T>) {
    assert!(ambient.len() == output.len() && output.len() == mask.len());
    let inv = T::one() / T::lit(output.len() as f64);
    let mut sum = T::zero();
    let grad = ambient
        .iter()
        .zip(output)
        .zip(mask)
        .map(|((&a, &o), &m)| {
            let d = m * o - m * a;
            sum += d.abs();
            m * sign(d) * inv
        })
        .collect();
    (sum * inv, grad)
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn mean_softplus<T: Scalar>(xs: impl Iterator<Item = T>, n: usize) -> T {
    xs.map(softplus).sum::<T>() / T::lit(n as f64)
}

/// `-mean(log D(real)) - mean(log(1 - D(fake)))`, minimized by a
/// discriminator that scores real patches 1 and fake patches 0.
pub fn discriminator_loss<T: Scalar>(d_real: &PatchScores<T>, d_fake: &PatchScores<T>) -> Result<T> {
    Ok(discriminator_loss_grad(d_real, d_fake)?.0)
}

/// Discriminator loss and its gradients with respect to the real and fake logits.
pub fn discriminator_loss_grad<T: Scalar>(
    d_real: &PatchScores<T>,
    d_fake: &PatchScores<T>,
) -> Result<(T, Vec<T>, Vec<T>)> {
    d_real.check("real scores")?;
    d_fake.check("fake scores")?;
    let (nr, nf) = (d_real.len(), d_fake.len());
    let loss = mean_softplus(d_real.logits.iter().map(|&x| -x), nr) + mean_softplus(d_fake.logits.iter().copied(), nf);
    let inv_r = T::one() / T::lit(nr as f64);
    let inv_f = T::one() / T::lit(nf as f64);
    let g_real = d_real.logits.iter().map(|&x| -sigmoid(-x) * inv_r).collect();
    let g_fake = d_fake.logits.iter().map(|&x| sigmoid(x) * inv_f).collect();
    Ok((loss, g_real, g_fake))
}

/// Non-saturating generator loss `-mean(log D(fake))`.
pub fn generator_adversarial_loss<T: Scalar>(d_fake: &PatchScores<T>) -> Result<T> {
    Ok(generator_adversarial_loss_grad(d_fake)?.0)
}

/// Generator adversarial loss and its gradient with respect to the fake logits.
pub fn generator_adversarial_loss_grad<T: Scalar>(d_fake: &PatchScores<T>) -> Result<(T, Vec<T>)> {
    d_fake.check("fake scores")?;
    let n = d_fake.len();
    let loss = mean_softplus(d_fake.logits.iter().map(|&x| -x), n);
    let inv = T::one() / T::lit(n as f64);
    let grad = d_fake.logits.iter().map(|&x| -sigmoid(-x) * inv).collect();
    Ok((loss, grad))
}

/// `rec + lambda · adv_g`.
pub fn total_generator_loss<T: Scalar>(rec: T, adv_g: T, lambda: T) -> T {
    rec + lambda * adv_g
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub adversarial_d: f64,
    pub adversarial_g: f64,
    pub total_g: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.reconstruction, self.adversarial_d, self.adversarial_g, self.total_g].iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{apply_attention, AttentionMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn probs(v: &[f64]) -> PatchScores<f64> {
        PatchScores::from_probabilities(v).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let a = Image::<f64>::filled(4, 4, 3, 0.3);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let b = Image::<f64>::filled(4, 4, 3, 0.4);
        assert!((reconstruction_loss(&a, &b).unwrap() - 0.1).abs() < 1e-12);

        let zero = AttentionMap::new(4, 4, vec![0.0; 16]).unwrap();
        let am = apply_attention(&a, &zero).unwrap();
        let bm = apply_attention(&Image::filled(4, 4, 3, 0.9), &zero).unwrap();
        assert_eq!(reconstruction_loss(&am, &bm).unwrap(), 0.0);
        assert!(reconstruction_loss(&a, &Image::filled(4, 5, 3, 0.3)).is_err());
    }

    #[test]
    fn discriminator_closed_forms() {
        let half = probs(&[0.5; 6]);
        let l = discriminator_loss(&half, &half).unwrap();
        assert!((l - 2.0 * LN2).abs() < 1e-12);
        let perfect = discriminator_loss(&probs(&[1.0 - 1e-12; 3]), &probs(&[1e-12; 3])).unwrap();
        assert!(perfect < 1e-10);
        let (r, f) = (probs(&[0.5; 4]), probs(&[0.5; 4]));
        assert_eq!(discriminator_loss(&r, &f).unwrap(), discriminator_loss(&f, &r).unwrap());
    }

    #[test]
    fn generator_closed_forms() {
        assert!((generator_adversarial_loss(&probs(&[0.5; 5])).unwrap() - LN2).abs() < 1e-12);
        assert!((generator_adversarial_loss(&probs(&[0.25; 5])).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(generator_adversarial_loss(&probs(&[1.0 - 1e-12])).unwrap() < 1e-10);
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let bad = PatchScores::from_logits(vec![0.0, f64::NAN]);
        assert!(matches!(generator_adversarial_loss(&bad), Err(Error::Numeric(_))));
        assert!(matches!(discriminator_loss(&bad, &probs(&[0.5])), Err(Error::Numeric(_))));
        let saturated = probs(&[1.0]);
        assert!(generator_adversarial_loss(&saturated).is_err());
        assert!(PatchScores::<f64>::from_probabilities(&[1.5]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.6931 is the rounded value used in the worked example
    fn total_examples() {
        assert_eq!(total_generator_loss(0.37f64, 0.81, 0.0), 0.37);
        assert!((total_generator_loss(0.1f64, 0.6931, 1.0) - 0.7931).abs() < 1e-12);
        assert_eq!(total_generator_loss(0.0f64, 0.0, 1.0), 0.0);
    }

    #[test]
    fn discriminator_loss_increases_with_fake_scores() {
        let real = probs(&[0.7, 0.6, 0.9]);
        let mut fake = vec![0.2, 0.3, 0.4];
        let mut last = discriminator_loss(&real, &probs(&fake)).unwrap();
        for _ in 0..10 {
            fake[1] += 0.05;
            let now = discriminator_loss(&real, &probs(&fake)).unwrap();
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn all_ones_mask_equals_unguided_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..48).map(|_| rng.random()).collect();
        let o: Vec<f64> = (0..48).map(|_| rng.random()).collect();
        let (guided, g1) = guided_reconstruction(&a, &o, &[1.0; 48]);
        assert_eq!(guided, l1_mean(&a, &o));
        assert_eq!(g1, l1_mean_grad(&a, &o));
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) == 1.0);
        assert!((softplus(0.0f64) - LN2).abs() < 1e-15);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
    }
}
