use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Passes over each iteration's batch pool.
    pub epochs: usize,
    /// Mini-batches the pool is split into per epoch.
    pub mini_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            lr: 1e-4,
            weight_decay: 5e-4,
            epochs: 5,
            mini_batches: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.epochs == 0 || self.mini_batches == 0 {
            return invalid("iterations, epochs and mini-batches must be positive");
        }
        if self.batch_size < 2 {
            return invalid(format!(
                "batch size must be at least 2 for batch statistics, got {}",
                self.batch_size
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.mini_batches * self.batch_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.max_iterations, 5000);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!((c.epochs, c.mini_batches), (5, 10));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 1,
                ..Default::default()
            },
            TrainConfig {
                weight_decay: -1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "seed": 7}"#).unwrap();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.seed, 7);
        assert_eq!(c.epochs, 5);
    }
}
