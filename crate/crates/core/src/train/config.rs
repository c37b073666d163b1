use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Peak learning rate, reached at `warmup_steps`.
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Optional cap in passes over the training data; whichever of
    /// `total_steps` and `epochs` ends first stops the run.
    pub epochs: Option<u64>,
    /// Padded tokens per batch (longest side + 1, times sentences).
    pub batch_tokens: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub label_smoothing: f64,
    pub dropout_rate: f64,
    pub validation_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            warmup_steps: 400,
            total_steps: 4000,
            epochs: None,
            batch_tokens: 2048,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 1.0,
            label_smoothing: 0.1,
            dropout_rate: 0.3,
            validation_interval: 200,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0,1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must lie in [0,1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0,1)");
        }
        if self.adam_eps <= 0.0 || self.clip_norm < 0.0 {
            return fail("adam_eps must be positive and clip_norm non-negative");
        }
        if self.total_steps == 0 || self.validation_interval == 0 || self.batch_tokens == 0 {
            return fail("total_steps, validation_interval and batch_tokens must be positive");
        }
        if self.epochs == Some(0) {
            return fail("epochs must be positive when given");
        }
        Ok(())
    }

    /// Linear warmup to the peak at `warmup_steps`, then inverse square
    /// root decay. Steps are 1-based.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        let warm = self.warmup_steps as f64;
        if self.warmup_steps == 0 {
            self.learning_rate / step.sqrt()
        } else if step <= warm {
            self.learning_rate * step / warm
        } else {
            self.learning_rate * (warm / step).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(c.warmup_steps), c.learning_rate);
        assert!(c.lr_at(1) < c.lr_at(2));
        assert!(c.lr_at(401) < c.lr_at(400));
        assert!((c.lr_at(1600) - c.learning_rate / 2.0).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta2: 1.0, ..Default::default() },
            TrainConfig { label_smoothing: 1.0, ..Default::default() },
            TrainConfig { epochs: Some(0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
