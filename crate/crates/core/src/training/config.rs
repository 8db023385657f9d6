use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization hyperparameters for pretraining and adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Weight of the adversarial term in the generator objective.
    pub lambda_adv: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub warmup_steps: u64,
    /// Discriminator-only steps before joint training.
    pub freeze_g_steps: u64,
    pub joint_steps: u64,
    pub batch_clips: usize,
    /// Upper bound on the crop length in samples. Crops use the largest
    /// multiple of the hop that fits.
    pub max_sample_len: usize,
    pub pretrain_steps: u64,
    /// Weight of the time-domain L1 term, pretraining only.
    pub pretrain_l1_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Held-out evaluation period in steps; 0 disables periodic evaluation.
    pub eval_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1.5,
            lr_g: 0.005,
            lr_d: 0.001,
            warmup_steps: 4000,
            freeze_g_steps: 500,
            joint_steps: 3000,
            batch_clips: 4,
            max_sample_len: 4096,
            pretrain_steps: 500,
            pretrain_l1_weight: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 500,
        }
    }
}

impl TrainingConfig {
    /// Schedule lengths and crop size of the original large-scale setup.
    pub fn full_scale() -> Self {
        Self {
            freeze_g_steps: 50_000,
            joint_steps: 100_000,
            max_sample_len: 24_000,
            ..Self::default()
        }
    }

    pub fn adaptation_steps(&self) -> u64 {
        self.freeze_g_steps + self.joint_steps
    }

    /// Crop length actually used for a given hop.
    pub fn crop_len(&self, hop: usize) -> usize {
        self.max_sample_len / hop * hop
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        let positive = [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "training.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(Error::Config(format!(
                "training.lambda_adv must be >= 0, got {}",
                self.lambda_adv
            )));
        }
        if !(self.pretrain_l1_weight >= 0.0) {
            return Err(Error::Config(
                "training.pretrain_l1_weight must be >= 0".into(),
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "training.{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if self.warmup_steps == 0 || self.batch_clips == 0 {
            return Err(Error::Config(
                "training.warmup_steps and batch_clips must be positive".into(),
            ));
        }
        if self.max_sample_len < hop {
            return Err(Error::Config(format!(
                "training.max_sample_len ({}) is shorter than the hop ({hop})",
                self.max_sample_len
            )));
        }
        Ok(())
    }
}
