//! Training and evaluation regimes.
//!
//! * `jdl`: myocardium net → softmax foreground map ⊙ image → scar net,
//!   trained jointly under one objective with gradients flowing through the
//!   mask.
//! * `direct`: one net from image to scar.
//! * `two_step`: myocardium net trained first; scar net trained on images
//!   masked with the ground-truth myocardium, evaluated on images masked
//!   with the predicted one.
//! * `mtl`: shared encoder, two decoders, no input masking.

mod audit;
mod eval;
mod train;

pub use audit::{Access, AccessLog, MaskSource, Stage};
pub use eval::{binarize, evaluate, evaluate_audited, evaluate_with, predict, predict_audited, MetricsReport, Prediction};
pub use train::{
    coupling_gradient_norm, jdl_gradients, message_pass, train, train_audited, train_baseline, train_jdl, BatchLosses,
};

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nets::{read_checkpoint, write_checkpoint, Arch, MultiHeadParams, NetworkParams, Part};
use crate::synthdata::AffineRanges;
use crate::tensor::Tensor;

type NamedTensors = Vec<(String, Tensor<f32>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Jdl,
    Direct,
    TwoStep,
    Mtl,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [Self::Jdl, Self::Direct, Self::TwoStep, Self::Mtl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jdl => "jdl",
            Self::Direct => "direct",
            Self::TwoStep => "two_step",
            Self::Mtl => "mtl",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown pipeline kind `{s}` (expected jdl, direct, two_step or mtl)")))
    }
}

/// Every setting of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: PipelineKind,
    pub arch: Arch,
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub tau: f64,
    /// Cuts the gradient through the message-passing mask (ablation).
    pub detach_mask: bool,
    /// JDL only: leading epochs that train the myocardium net alone.
    pub warm_start_epochs: usize,
    pub augment: bool,
    pub augment_ranges: AffineRanges,
    /// Two-step only: share of the epoch budget spent on the myocardium net.
    pub myo_epoch_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(PipelineKind::Jdl)
    }
}

impl TrainConfig {
    /// 64×64 CPU scale: batch 8, tuned JDL hyperparameters.
    pub fn desk(kind: PipelineKind) -> Self {
        Self {
            kind,
            arch: Arch::default(),
            loss: LossConfig::default(),
            lr: 4.73e-4,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            tau: 0.5,
            detach_mask: false,
            warm_start_epochs: 0,
            augment: false,
            augment_ranges: AffineRanges::default(),
            myo_epoch_fraction: 0.5,
        }
    }

    /// Batch size 40, 500 epochs and augmentation.
    pub fn full_scale(kind: PipelineKind) -> Self {
        Self {
            batch_size: 40,
            epochs: 500,
            augment: true,
            ..Self::desk(kind)
        }
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = match self.arch.validate() {
            Err(Error::Config(v)) => v,
            _ => Vec::new(),
        };
        p.extend(self.loss.problems());
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            p.push("epochs must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            p.push(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.warm_start_epochs >= self.epochs && self.warm_start_epochs > 0 {
            p.push(format!(
                "warm_start_epochs ({}) must be below epochs ({})",
                self.warm_start_epochs, self.epochs
            ));
        }
        if !(self.myo_epoch_fraction > 0.0 && self.myo_epoch_fraction < 1.0) {
            p.push(format!("myo_epoch_fraction must lie in (0, 1), got {}", self.myo_epoch_fraction));
        }
        if self.kind == PipelineKind::TwoStep && self.epochs < 2 {
            p.push("two_step needs at least 2 epochs".into());
        }
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

    /// Two-step epoch split: (myocardium epochs, scar epochs).
    pub fn two_step_split(&self) -> (usize, usize) {
        let myo = ((self.epochs as f64 * self.myo_epoch_fraction).round() as usize).clamp(1, self.epochs - 1);
        (myo, self.epochs - myo)
    }
}

/// Trained weights of one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Jdl {
        myo: NetworkParams<f32>,
        scar: NetworkParams<f32>,
    },
    Direct {
        scar: NetworkParams<f32>,
    },
    TwoStep {
        myo: NetworkParams<f32>,
        scar: NetworkParams<f32>,
    },
    Mtl(MultiHeadParams<f32>),
}

impl ModelParams {
    pub fn kind(&self) -> PipelineKind {
        match self {
            Self::Jdl { .. } => PipelineKind::Jdl,
            Self::Direct { .. } => PipelineKind::Direct,
            Self::TwoStep { .. } => PipelineKind::TwoStep,
            Self::Mtl(_) => PipelineKind::Mtl,
        }
    }

    pub fn arch(&self) -> &Arch {
        match self {
            Self::Jdl { scar, .. } | Self::Direct { scar } | Self::TwoStep { scar, .. } => scar.arch(),
            Self::Mtl(p) => p.arch(),
        }
    }

    /// Named parameter sets in checkpoint order.
    pub fn groups(&self) -> Vec<(&'static str, &NetworkParams<f32>)> {
        match self {
            Self::Jdl { myo, scar } | Self::TwoStep { myo, scar } => vec![("myo", myo), ("scar", scar)],
            Self::Direct { scar } => vec![("scar", scar)],
            Self::Mtl(p) => vec![("enc", &p.encoder), ("dec_m", &p.decoder_m), ("dec_s", &p.decoder_s)],
        }
    }

    /// Number of independent parameter sets (networks or network parts).
    pub fn set_count(&self) -> usize {
        self.groups().len()
    }

    /// Writes a checkpoint; tensor names are `<kind>.<group>.<layer>.{w,b}`.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let kind = self.kind().as_str();
        let named: Vec<(String, &Tensor<f32>)> = self
            .groups()
            .into_iter()
            .flat_map(|(group, p)| p.iter().map(move |(n, t)| (format!("{kind}.{group}.{n}"), t)))
            .collect();
        write_checkpoint(out, named.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Reads a checkpoint, inferring the pipeline kind and architecture from
    /// tensor names and shapes. Dropout is set to 0.
    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let tensors = read_checkpoint(input)?;
        let Some((first, _)) = tensors.first() else {
            return Err(Error::Invalid("checkpoint holds no tensors".into()));
        };
        let kind: PipelineKind = first.split('.').next().unwrap_or_default().parse()?;
        let mut groups: Vec<(String, NamedTensors)> = Vec::new();
        for (name, t) in tensors {
            let mut parts = name.splitn(3, '.');
            let (Some(k), Some(group), Some(layer)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Invalid(format!("malformed tensor name `{name}`")));
            };
            if k != kind.as_str() {
                return Err(Error::Invalid(format!("tensor `{name}` does not belong to a {kind} checkpoint")));
            }
            match groups.last_mut() {
                Some((g, v)) if g == group => v.push((layer.to_string(), t)),
                _ => groups.push((group.to_string(), vec![(layer.to_string(), t)])),
            }
        }
        let arch = infer_arch(&groups[0].1)?;
        let mut take = |expect: &str, part: Part| -> Result<NetworkParams<f32>> {
            if groups.is_empty() || groups[0].0 != expect {
                return Err(Error::Invalid(format!("{kind} checkpoint is missing group `{expect}`")));
            }
            let (_, tensors) = groups.remove(0);
            NetworkParams::from_tensors(arch.clone(), part, tensors)
        };
        let model = match kind {
            PipelineKind::Jdl => Self::Jdl {
                myo: take("myo", Part::Full)?,
                scar: take("scar", Part::Full)?,
            },
            PipelineKind::TwoStep => Self::TwoStep {
                myo: take("myo", Part::Full)?,
                scar: take("scar", Part::Full)?,
            },
            PipelineKind::Direct => Self::Direct {
                scar: take("scar", Part::Full)?,
            },
            PipelineKind::Mtl => Self::Mtl(MultiHeadParams {
                encoder: take("enc", Part::Encoder)?,
                decoder_m: take("dec_m", Part::Decoder)?,
                decoder_s: take("dec_s", Part::Decoder)?,
            }),
        };
        if !groups.is_empty() {
            return Err(Error::Invalid(format!("unexpected tensor group `{}`", groups[0].0)));
        }
        Ok(model)
    }
}

fn infer_arch(tensors: &[(String, Tensor<f32>)]) -> Result<Arch> {
    let shape = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.shape().to_vec());
    let depth = (0..).take_while(|l| shape(&format!("enc{l}.c1.w")).is_some()).count();
    let first = shape("enc0.c1.w").ok_or_else(|| Error::Invalid("checkpoint lacks enc0.c1.w".into()))?;
    Ok(Arch {
        depth,
        base_channels: first[0],
        in_channels: first[1],
        out_channels: 2,
        dropout_p: 0.0,
    })
}

/// Per-epoch means of the batch objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub myo: f64,
    pub scar: f64,
    pub reg: f64,
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn kind(&self) -> PipelineKind {
        self.params.kind()
    }

    /// `epoch,total,L_m,L_s,reg` with shortest round-trip decimals.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,total,L_m,L_s,reg\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.total, r.myo, r.scar, r.reg));
        }
        s
    }
}
