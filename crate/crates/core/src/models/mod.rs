//! Learnable components: a patch-input softmax segmenter and per-joint
//! pose regressors, both built on a small hand-rolled perceptron.

pub mod io;
pub mod mlp;
pub mod morphology;
pub mod reg;
pub mod seg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mlp::{grad_check, softmax, AdamState, GradCheckReport, Grads, Mlp};
pub use morphology::{disc_offsets, joint_masks, opening};
pub use reg::{predict_pose, reg_features, train_regressor, RegInputMode, RegModel, REG_FEATURE_LEN};
pub use seg::{
    finetune_segmenter, predict_labelmap, seg_forward, seg_loss_grad, train_segmenter, SegModel,
    TrainCurve,
};

/// Segmenter pre-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Foreground pixels sampled per image per epoch; 0 means all of them.
    pub pixels_per_image: usize,
    pub hidden: usize,
    /// Side length of the square depth patch fed to the segmenter.
    pub patch: usize,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 100,
            batch: 1,
            lr: 0.1,
            lr_decay: 1e-5,
            pixels_per_image: 0,
            hidden: 64,
            patch: 9,
        }
    }
}

/// Fine-tuning hyperparameters (the mixing ratio lives in the stream builder).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub synth_per_pseudo: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            synth_per_pseudo: 9,
        }
    }
}

/// Regressor training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RegTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hidden: usize,
    pub opening_radius: usize,
}

impl Default for RegTrainConfig {
    fn default() -> Self {
        RegTrainConfig {
            epochs: 50,
            batch: 64,
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hidden: 128,
            opening_radius: 1,
        }
    }
}

/// All training hyperparameters in one place.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seg: SegTrainConfig,
    pub finetune: FinetuneConfig,
    pub reg: RegTrainConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.seg.epochs == 0 || self.seg.batch == 0 {
            return bad("seg epochs/batch");
        }
        if self.seg.lr <= 0.0 || self.seg.lr_decay < 0.0 {
            return bad("seg lr (decay may be zero but not negative)");
        }
        if self.seg.hidden == 0 || self.seg.patch == 0 || self.seg.patch % 2 == 0 {
            return Err(Error::Config(
                "seg hidden must be positive and patch odd".into(),
            ));
        }
        if self.finetune.epochs == 0 {
            return bad("finetune epochs");
        }
        if self.reg.epochs == 0 || self.reg.batch == 0 || self.reg.hidden == 0 {
            return bad("reg epochs/batch/hidden");
        }
        if self.reg.lr <= 0.0 || self.reg.eps <= 0.0 {
            return bad("reg lr/eps");
        }
        if !(0.0..1.0).contains(&self.reg.beta1) || !(0.0..1.0).contains(&self.reg.beta2) {
            return Err(Error::Config("reg betas must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_lr_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.seg.lr = 0.0;
        assert!(cfg.validate().is_err());
    }
}
