use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::message_pass;
use super::{AccessLog, MaskSource, ModelParams, Stage};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{summarize, PairScore, Summary};
use crate::nets::{multihead_forward, unet_forward, NetworkParams};
use crate::synthdata::Sample;
use crate::tensor::{Graph, Mode, NodeId, Tensor};

/// Foreground probability maps (`H×W`) for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Absent for the direct pipeline.
    pub myo: Option<Tensor<f32>>,
    pub scar: Tensor<f32>,
}

fn foreground(g: &mut Graph<f32>, logits: NodeId) -> Result<NodeId> {
    let p = g.softmax_channel(logits)?;
    g.channel(p, 1)
}

fn single(g: &mut Graph<f32>, p: &NetworkParams<f32>, image: NodeId, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let nodes = p.bind(g, false);
    let logits = unet_forward(g, &nodes, p.arch(), image, Mode::Eval, rng)?;
    foreground(g, logits)
}

/// Eval-mode forward pass. The JDL and two-step pipelines mask the scar
/// input with their own predicted myocardium map; each such use is logged.
pub fn predict_audited(model: &ModelParams, sample: &Sample, log: &AccessLog) -> Result<Prediction> {
    model.arch().check_input(sample.image.shape())?;
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let image = g.constant(sample.image.clone());
    let (myo, scar) = match model {
        ModelParams::Jdl { myo, scar } | ModelParams::TwoStep { myo, scar } => {
            let m = single(&mut g, myo, image, &mut rng)?;
            let masked = message_pass(&mut g, image, m)?;
            log.record(&sample.id, MaskSource::Predicted, Stage::Predict);
            (Some(m), single(&mut g, scar, masked, &mut rng)?)
        }
        ModelParams::Direct { scar } => (None, single(&mut g, scar, image, &mut rng)?),
        ModelParams::Mtl(p) => {
            let nodes = p.bind(&mut g, false);
            let (lm, ls) = multihead_forward(&mut g, &nodes, p.arch(), image, Mode::Eval, &mut rng)?;
            (Some(foreground(&mut g, lm)?), foreground(&mut g, ls)?)
        }
    };
    Ok(Prediction {
        myo: myo.map(|m| g.value(m).clone()),
        scar: g.value(scar).clone(),
    })
}

pub fn predict(model: &ModelParams, sample: &Sample) -> Result<Prediction> {
    predict_audited(model, sample, &AccessLog::new())
}

/// Foreground where `prob ≥ tau`.
pub fn binarize(prob: &Tensor<f32>, tau: f64) -> Result<Mask> {
    let [h, w] = prob.shape()[..] else {
        return Err(Error::InvalidShape {
            op: "binarize",
            msg: format!("expected H×W, got {:?}", prob.shape()),
        });
    };
    let tau = tau as f32;
    Ok(Mask::from_fn(h, w, |y, x| prob.data()[y * w + x] >= tau))
}

/// Per-image scores and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scar: Vec<PairScore>,
    /// Absent for the direct pipeline.
    pub myo: Option<Vec<PairScore>>,
    pub scar_summary: Summary,
    pub myo_summary: Option<Summary>,
}

/// Scores whatever `predictor` returns for each sample.
pub fn evaluate_with(
    samples: &[Sample],
    tau: f64,
    mut predictor: impl FnMut(&Sample) -> Result<Prediction>,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let mut scar = Vec::with_capacity(samples.len());
    let mut myo = Vec::with_capacity(samples.len());
    let mut myo_present = None;
    for s in samples {
        let p = predictor(s)?;
        scar.push(PairScore::score(&s.id, &s.scar, &binarize(&p.scar, tau)?)?);
        match (&p.myo, *myo_present.get_or_insert(p.myo.is_some())) {
            (Some(m), true) => myo.push(PairScore::score(&s.id, &s.myo, &binarize(m, tau)?)?),
            (None, false) => {}
            _ => return Err(Error::Invalid("predictor returned myocardium maps for only some samples".into())),
        }
    }
    let myo = (myo_present == Some(true)).then_some(myo);
    Ok(MetricsReport {
        scar_summary: summarize(&scar)?,
        myo_summary: myo.as_deref().map(summarize).transpose()?,
        scar,
        myo,
    })
}

pub fn evaluate_audited(model: &ModelParams, samples: &[Sample], tau: f64, log: &AccessLog) -> Result<MetricsReport> {
    evaluate_with(samples, tau, |s| predict_audited(model, s, log))
}

pub fn evaluate(model: &ModelParams, samples: &[Sample], tau: f64) -> Result<MetricsReport> {
    evaluate_audited(model, samples, tau, &AccessLog::new())
}
