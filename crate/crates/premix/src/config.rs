//! Run configuration: one TOML file drives dataset generation, both
//! training phases, and the selection loop. Key names mirror the struct
//! fields; environment variables are never consulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::Strategy;
use crate::augment::{AugmentConfig, ViewMode};
use crate::dataset::SynthSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ArchConfig, MixConfig};
use crate::optim::{AdamConfig, GroupLr, LarsConfig, ScheduleSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Directory holding `manifest.json` and the bag files.
    pub dir: PathBuf,
    /// Also feed the (unlabeled) pool bags to pre-training.
    pub include_pool_in_pretraining: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            dir: PathBuf::from("data"),
            include_pool_in_pretraining: false,
        }
    }
}

/// Augmentation settings as written in the config file. `noise_sigma`
/// left unset means one tenth of the dataset's feature standard deviation,
/// resolved when training starts.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSection {
    pub p_flip: f64,
    pub p_crop: f64,
    pub p_zero: f64,
    pub p_scale: f64,
    pub p_noise: f64,
    pub zero_rate: f64,
    pub noise_sigma: Option<f64>,
    pub scale_range: [f64; 2],
    pub crop_keep_range: [f64; 2],
    pub view_mode: ViewMode,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let base = AugmentConfig::default();
        AugmentSection {
            p_flip: base.p_flip,
            p_crop: base.p_crop,
            p_zero: base.p_zero,
            p_scale: base.p_scale,
            p_noise: base.p_noise,
            zero_rate: base.zero_rate,
            noise_sigma: None,
            scale_range: base.scale_range,
            crop_keep_range: base.crop_keep_range,
            view_mode: ViewMode::Sa,
        }
    }
}

impl AugmentSection {
    /// Concrete augmentation parameters given the dataset's feature std.
    pub fn resolve(&self, feature_std: f64) -> AugmentConfig {
        AugmentConfig {
            p_flip: self.p_flip,
            p_crop: self.p_crop,
            p_zero: self.p_zero,
            p_scale: self.p_scale,
            p_noise: self.p_noise,
            zero_rate: self.zero_rate,
            noise_sigma: self.noise_sigma.unwrap_or(0.1 * feature_std),
            scale_range: self.scale_range,
            crop_keep_range: self.crop_keep_range,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr_weights: f64,
    pub base_lr_bias_norm: f64,
    pub warmup_epochs: usize,
    pub final_factor: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coeff: f64,
    /// Beta parameters of the per-sample span-mix draw.
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 300,
            batch_size: 32,
            base_lr_weights: 0.2,
            base_lr_bias_norm: 0.0048,
            warmup_epochs: 10,
            final_factor: 1000.0,
            weight_decay: 1e-6,
            momentum: 0.9,
            trust_coeff: 0.001,
            beta_a: 1.0,
            beta_b: 1.0,
        }
    }
}

impl PretrainSection {
    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            base_lr: GroupLr {
                weights: self.base_lr_weights,
                bias_norm: self.base_lr_bias_norm,
            },
            batch_size: self.batch_size,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
            final_factor: self.final_factor,
            step_size: 1,
            step_gamma: 1.0,
        }
    }

    pub fn lars(&self) -> LarsConfig {
        LarsConfig {
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            trust_coeff: self.trust_coeff,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub step_gamma: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            epochs: 50,
            batch_size: 4,
            lr: 2e-4,
            weight_decay: 1e-5,
            step_size: 50,
            step_gamma: 0.5,
        }
    }
}

impl FinetuneSection {
    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            base_lr: GroupLr { weights: self.lr, bias_norm: self.lr },
            batch_size: self.batch_size,
            warmup_epochs: 0,
            total_epochs: self.epochs,
            final_factor: 1.0,
            step_size: self.step_size,
            step_gamma: self.step_gamma,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AlSection {
    pub strategy: Strategy,
    pub initial_size: usize,
    pub budget: usize,
    pub iterations: usize,
    /// Initialize each iteration's model from this checkpoint (cold start
    /// from scratch when unset).
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for AlSection {
    fn default() -> Self {
        AlSection {
            strategy: Strategy::Random,
            initial_size: 20,
            budget: 20,
            iterations: 5,
            init_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub synth: SynthSpec,
    pub arch: ArchConfig,
    pub augment: AugmentSection,
    pub mixing: MixConfig,
    pub loss: LossWeights,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub al: AlSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.arch.validate()?;
        self.loss.validate()?;
        if self.pretrain.epochs == 0 || self.finetune.epochs == 0 {
            return Err(Error::Config("epoch counts must be at least 1".into()));
        }
        if self.pretrain.batch_size < 2 {
            return Err(Error::Config("pre-training needs a batch size of at least 2".into()));
        }
        if self.finetune.batch_size == 0 {
            return Err(Error::Config("fine-tuning batch size must be at least 1".into()));
        }
        if self.pretrain.warmup_epochs > self.pretrain.epochs {
            return Err(Error::Config("warmup cannot exceed the epoch count".into()));
        }
        self.augment.resolve(1.0).validate()?;
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset.dir.join("manifest.json")
    }

    /// Hash of the architecture-compatibility section. Checkpoints carry it
    /// so artifacts from incompatible configurations are rejected on load;
    /// schedule or epoch overrides do not invalidate a checkpoint.
    pub fn config_hash(&self) -> String {
        let canon = serde_json::to_string(&self.arch).expect("arch serializes");
        format!("{:016x}", fnv1a(canon.as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.pretrain.epochs, 300);
        assert_eq!(cfg.pretrain.batch_size, 32);
        assert_eq!(cfg.finetune.epochs, 50);
        assert_eq!(cfg.finetune.batch_size, 4);
        assert_eq!(cfg.finetune.lr, 2e-4);
        assert_eq!(cfg.loss.lambda_bt, 0.0051);
        assert_eq!(cfg.al.budget, 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_override_cleanly() {
        let text = r#"
seed = 9
[arch]
dim = 32
hidden = 32
layers = 1
heads = 2
ffn_ratio = 2
pool_dim = 16
positional = false
[arch.projector]
kind = "standard"
dims = [64, 64, 32]

[pretrain]
epochs = 50
batch_size = 8

[mixing]
locations = ["loc1", "loc3"]
beta_a = 1.0
beta_b = 1.0

[augment]
view_mode = "rq"
noise_sigma = 0.25
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.arch.dim, 32);
        assert_eq!(cfg.mixing.locations.len(), 2);
        assert_eq!(cfg.augment.noise_sigma, Some(0.25));
        assert_eq!(cfg.augment.view_mode, ViewMode::Rq);
        assert_eq!(cfg.augment.resolve(2.0).noise_sigma, 0.25);
        let auto = AugmentSection { noise_sigma: None, ..cfg.augment.clone() };
        assert_eq!(auto.resolve(2.0).noise_sigma, 0.2);
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a: RunConfig = toml::from_str("").unwrap();
        let mut b: RunConfig = toml::from_str("").unwrap();
        b.pretrain.epochs = 700;
        b.seed = 42;
        assert_eq!(a.config_hash(), b.config_hash());
        b.arch.hidden = 96;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg: RunConfig = toml::from_str("").unwrap();
        cfg.pretrain.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg: RunConfig = toml::from_str("").unwrap();
        cfg.arch.heads = 5; // 192 % 5 != 0
        assert!(cfg.validate().is_err());
    }
}
