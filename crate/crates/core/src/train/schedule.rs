use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::TrainError;

/// Linear warmup into a half-cosine decay, then a constant floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    /// Step at which the decay reaches `lr_min`.
    pub cosine_length: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { peak_lr: 4e-4, lr_min: 1e-7, warmup_steps: 100, cosine_length: 2000 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.peak_lr && self.peak_lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "schedule needs 0 < lr_min <= peak_lr, got lr_min {} and peak_lr {}",
                self.lr_min, self.peak_lr
            )));
        }
        if self.cosine_length <= self.warmup_steps {
            return Err(TrainError::InvalidConfig(format!(
                "cosine_length {} must exceed warmup_steps {}",
                self.cosine_length, self.warmup_steps
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let span = self.peak_lr - self.lr_min;
        if step < self.warmup_steps {
            self.lr_min + span * step as f64 / self.warmup_steps as f64
        } else if step >= self.cosine_length {
            self.lr_min
        } else {
            let progress = (step - self.warmup_steps) as f64 / (self.cosine_length - self.warmup_steps) as f64;
            self.lr_min + span * (1.0 + (PI * progress).cos()) / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let s = ScheduleConfig::default();
        assert_eq!(s.lr_at(0), 1e-7);
        assert_eq!(s.lr_at(100), 4e-4);
        assert_eq!(s.lr_at(2000), 1e-7);
        assert_eq!(s.lr_at(10_000), 1e-7);
        assert!((s.lr_at(1050) - (4e-4 + 1e-7) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn decay_is_monotone() {
        let s = ScheduleConfig::default();
        let lrs: Vec<f64> = (100..=2000).map(|k| s.lr_at(k)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        let ramp: Vec<f64> = (0..=100).map(|k| s.lr_at(k)).collect();
        assert!(ramp.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = ScheduleConfig { lr_min: 1e-3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScheduleConfig { cosine_length: 100, ..Default::default() };
        assert!(bad.validate().is_err());
        let no_warmup = ScheduleConfig { warmup_steps: 0, ..Default::default() };
        assert!(no_warmup.validate().is_ok());
        assert_eq!(no_warmup.lr_at(0), 4e-4);
    }
}
