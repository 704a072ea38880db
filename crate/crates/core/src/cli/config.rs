use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nets::Arch;
use crate::pipelines::{PipelineKind, TrainConfig};
use crate::synthdata::AffineRanges;

/// Flat `key = value` run file.
///
/// ```toml
/// kind = "jdl"
/// train_data = "data/train.jsds"
/// epochs = 30
/// ```
///
/// Missing keys take the desk-scale defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: PipelineKind,
    pub train_data: PathBuf,
    pub out_dir: PathBuf,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub lambda: f64,
    pub beta_m: f64,
    pub beta_s: f64,
    pub w: f64,
    pub eps: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub detach_mask: bool,
    pub warm_start_epochs: usize,
    pub augment: bool,
    pub myo_epoch_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_train_config(&TrainConfig::default(), PathBuf::new(), PathBuf::from("run"))
    }
}

impl RunConfig {
    pub fn from_train_config(t: &TrainConfig, train_data: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            kind: t.kind,
            train_data,
            out_dir,
            depth: t.arch.depth,
            base_channels: t.arch.base_channels,
            dropout_p: t.arch.dropout_p,
            lr: t.lr,
            lambda: t.loss.lambda,
            beta_m: t.loss.beta_m,
            beta_s: t.loss.beta_s,
            w: t.loss.w,
            eps: t.loss.eps,
            tau: t.tau,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            detach_mask: t.detach_mask,
            warm_start_epochs: t.warm_start_epochs,
            augment: t.augment,
            myo_epoch_fraction: t.myo_epoch_fraction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            arch: Arch {
                depth: self.depth,
                base_channels: self.base_channels,
                dropout_p: self.dropout_p,
                ..Arch::default()
            },
            loss: LossConfig {
                w: self.w,
                eps: self.eps,
                lambda: self.lambda,
                beta_m: self.beta_m,
                beta_s: self.beta_s,
            },
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            tau: self.tau,
            detach_mask: self.detach_mask,
            warm_start_epochs: self.warm_start_epochs,
            augment: self.augment,
            augment_ranges: AffineRanges::default(),
            myo_epoch_fraction: self.myo_epoch_fraction,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.train_data.as_os_str().is_empty() {
            p.push("train_data is required".into());
        }
        if self.out_dir.as_os_str().is_empty() {
            p.push("out_dir must not be empty".into());
        }
        p.extend(self.train_config().problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}
