use serde::{Deserialize, Serialize};

/// Reconstruction loss above this multiple of its first-epoch mean counts
/// as a runaway step.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive runaway steps tolerated before training aborts.
pub const DIVERGENCE_PATIENCE: u64 = 100;

/// Tracks the first-epoch reconstruction mean and runaway streaks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceGuard {
    epoch1_sum: f64,
    epoch1_count: u64,
    reference: Option<f64>,
    streak: u64,
}

impl DivergenceGuard {
    /// Records one step of `epoch` (1-based); returns a reason to abort.
    pub fn observe(&mut self, epoch: u64, reconstruction: f64) -> Option<String> {
        if !reconstruction.is_finite() {
            return Some(format!("non-finite reconstruction loss {reconstruction}"));
        }
        if epoch == 1 && self.reference.is_none() {
            self.epoch1_sum += reconstruction;
            self.epoch1_count += 1;
            return None;
        }
        let limit = self.reference? * DIVERGENCE_FACTOR;
        if reconstruction > limit {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        (self.streak >= DIVERGENCE_PATIENCE).then(|| {
            format!(
                "reconstruction loss above {limit:.6} ({DIVERGENCE_FACTOR}x the first-epoch mean) for {} consecutive steps",
                self.streak
            )
        })
    }

    /// Fixes the reference once the first epoch has ended.
    pub fn end_epoch(&mut self, epoch: u64) {
        if epoch == 1 && self.reference.is_none() && self.epoch1_count > 0 {
            self.reference = Some(self.epoch1_sum / self.epoch1_count as f64);
        }
    }

    pub fn reference(&self) -> Option<f64> {
        self.reference
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aborts_after_patience() {
        let mut g = DivergenceGuard::default();
        for _ in 0..10 {
            assert!(g.observe(1, 0.1).is_none());
        }
        g.end_epoch(1);
        assert!((g.reference().unwrap() - 0.1).abs() < 1e-12);
        for _ in 0..DIVERGENCE_PATIENCE - 1 {
            assert!(g.observe(2, 1.5).is_none());
        }
        assert!(g.observe(2, 0.5).is_none(), "streak resets");
        for _ in 0..DIVERGENCE_PATIENCE - 1 {
            assert!(g.observe(3, 2.0).is_none());
        }
        assert!(g.observe(3, 2.0).is_some());
    }

    #[test]
    fn non_finite_aborts_immediately() {
        assert!(DivergenceGuard::default().observe(1, f64::NAN).is_some());
    }
}
