use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AccessLog, EpochRecord, MaskSource, ModelParams, PipelineKind, Stage, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::losses::{l2_reg, seg_loss, total_loss, JointTerm, LossConfig};
use crate::nets::{
    init_params, multihead_forward, unet_forward, Arch, Gradients, MultiHeadParams, NetworkParams, ParamNodes, Part,
};
use crate::optim::{adam_step, AdamState};
use crate::synthdata::{random_affine, Sample};
use crate::tensor::{Graph, Mode, NodeId, Real, Tensor};

/// Masks the image with the myocardium probability map: `prob ⊙ image`.
///
/// `image` is `1×H×W` and `myo_prob` is `H×W`; the product stays
/// differentiable in both.
pub fn message_pass<T: Real>(g: &mut Graph<T>, image: NodeId, myo_prob: NodeId) -> Result<NodeId> {
    let shape = g.shape(image).to_vec();
    let [1, h, w] = shape[..] else {
        return Err(Error::InvalidShape {
            op: "message_pass",
            msg: format!("image must be 1×H×W, got {shape:?}"),
        });
    };
    if g.shape(myo_prob) != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "message_pass",
            left: vec![h, w],
            right: g.shape(myo_prob).to_vec(),
        });
    }
    let mask = g.reshape(myo_prob, &[1, h, w])?;
    g.mul(mask, image)
}

/// Scalar values of one batch objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLosses {
    pub total: f64,
    pub myo: f64,
    pub scar: f64,
    pub reg: f64,
}

impl BatchLosses {
    fn read<T: Real>(g: &Graph<T>, total: NodeId, myo: Option<NodeId>, scar: Option<NodeId>, reg: NodeId) -> Self {
        let v = |id: NodeId| g.value(id).item().expect("scalar").as_f64();
        Self {
            total: v(total),
            myo: myo.map(v).unwrap_or(0.0),
            scar: scar.map(v).unwrap_or(0.0),
            reg: v(reg),
        }
    }
}

fn image_node<T: Real>(g: &mut Graph<T>, s: &Sample) -> NodeId {
    g.constant(s.image.cast())
}

fn prob<T: Real>(g: &mut Graph<T>, logits: NodeId) -> Result<NodeId> {
    g.softmax_channel(logits)
}

/// JDL objective on `batch`. Returns the loss handles.
#[allow(clippy::too_many_arguments)]
fn jdl_objective<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    myo: &ParamNodes,
    scar: &ParamNodes,
    arch: &Arch,
    batch: &[Sample],
    cfg: &LossConfig,
    detach_mask: bool,
    mode: Mode,
    rng: &mut R,
) -> Result<crate::losses::TotalLoss> {
    let mut probs = Vec::with_capacity(batch.len());
    for s in batch {
        let img = image_node(g, s);
        let logits_m = unet_forward(g, myo, arch, img, mode, rng)?;
        let p_m = prob(g, logits_m)?;
        let mut fg = g.channel(p_m, 1)?;
        if detach_mask {
            fg = g.detach(fg);
        }
        let masked = message_pass(g, img, fg)?;
        let logits_s = unet_forward(g, scar, arch, masked, mode, rng)?;
        probs.push((p_m, prob(g, logits_s)?));
    }
    let terms: Vec<JointTerm<'_>> = batch
        .iter()
        .zip(&probs)
        .map(|(s, &(m, sc))| JointTerm {
            myo_target: &s.myo,
            myo_prob: m,
            scar_target: &s.scar,
            scar_prob: sc,
        })
        .collect();
    total_loss(g, &terms, &[myo], &[scar], cfg)
}

/// One backward pass of the JDL objective. The myocardium gradient holds
/// `∂(λΣL_m + ΣL_s + β_M Reg)/∂θ_M`, the scar gradient
/// `∂(ΣL_s + β_S Reg)/∂θ_S`.
#[allow(clippy::too_many_arguments)]
pub fn jdl_gradients<T: Real, R: Rng + ?Sized>(
    myo: &NetworkParams<T>,
    scar: &NetworkParams<T>,
    batch: &[Sample],
    cfg: &LossConfig,
    detach_mask: bool,
    mode: Mode,
    rng: &mut R,
) -> Result<(BatchLosses, Gradients<T>, Gradients<T>)> {
    let mut g = Graph::new();
    let nm = myo.bind(&mut g, true);
    let ns = scar.bind(&mut g, true);
    let t = jdl_objective(&mut g, &nm, &ns, scar.arch(), batch, cfg, detach_mask, mode, rng)?;
    let losses = BatchLosses::read(&g, t.total, Some(t.myo), Some(t.scar), t.reg);
    g.backward(t.total)?;
    Ok((losses, nm.gradients(&g), ns.gradients(&g)))
}

/// `‖∂(Σ L_s)/∂θ_M‖₂` on one batch, evaluated in eval mode. Zero exactly
/// when the mask gradient is cut.
pub fn coupling_gradient_norm<T: Real>(
    myo: &NetworkParams<T>,
    scar: &NetworkParams<T>,
    batch: &[Sample],
    cfg: &LossConfig,
    detach_mask: bool,
) -> Result<f64> {
    let mut g = Graph::new();
    let nm = myo.bind(&mut g, true);
    let ns = scar.bind(&mut g, true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = jdl_objective(&mut g, &nm, &ns, scar.arch(), batch, cfg, detach_mask, Mode::Eval, &mut rng)?;
    g.backward(t.scar)?;
    Ok(nm.gradients(&g).norm())
}

/// Single-network objective `Σ seg_loss + β Reg`, optionally on masked
/// inputs. Used by the direct and two-step pipelines.
#[allow(clippy::too_many_arguments)]
fn single_gradients<R: Rng + ?Sized>(
    params: &NetworkParams<f32>,
    inputs: &[(Tensor<f32>, &crate::mask::Mask)],
    cfg: &LossConfig,
    beta: f64,
    rng: &mut R,
) -> Result<(f64, f64, Gradients<f32>)> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g, true);
    let mut acc: Option<NodeId> = None;
    for (image, target) in inputs {
        let img = g.constant(image.clone());
        let logits = unet_forward(&mut g, &nodes, params.arch(), img, Mode::Train, rng)?;
        let p = prob(&mut g, logits)?;
        let l = seg_loss(&mut g, target, p, cfg.w, cfg.eps)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    let seg = acc.ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let reg = l2_reg(&mut g, &[&nodes]);
    let reg = g.scale(reg, beta as f32);
    let total = g.add(seg, reg)?;
    let seg_v = g.value(seg).item().expect("scalar") as f64;
    let reg_v = g.value(reg).item().expect("scalar") as f64;
    g.backward(total)?;
    Ok((seg_v, reg_v, nodes.gradients(&g)))
}

fn mtl_gradients<R: Rng + ?Sized>(
    params: &MultiHeadParams<f32>,
    batch: &[Sample],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<(BatchLosses, [Gradients<f32>; 3])> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g, true);
    let arch = params.arch();
    let mut probs = Vec::with_capacity(batch.len());
    for s in batch {
        let img = image_node(&mut g, s);
        let (lm, ls) = multihead_forward(&mut g, &nodes, arch, img, Mode::Train, rng)?;
        probs.push((prob(&mut g, lm)?, prob(&mut g, ls)?));
    }
    let terms: Vec<JointTerm<'_>> = batch
        .iter()
        .zip(&probs)
        .map(|(s, &(m, sc))| JointTerm {
            myo_target: &s.myo,
            myo_prob: m,
            scar_target: &s.scar,
            scar_prob: sc,
        })
        .collect();
    // the shared encoder is regularised with the myocardium weight
    let t = total_loss(
        &mut g,
        &terms,
        &[&nodes.encoder, &nodes.decoder_m],
        &[&nodes.decoder_s],
        cfg,
    )?;
    let losses = BatchLosses::read(&g, t.total, Some(t.myo), Some(t.scar), t.reg);
    g.backward(t.total)?;
    Ok((
        losses,
        [
            nodes.encoder.gradients(&g),
            nodes.decoder_m.gradients(&g),
            nodes.decoder_s.gradients(&g),
        ],
    ))
}

/// Per-epoch sample order plus optional augmentation.
struct EpochFeeder<'a> {
    data: &'a [Sample],
    cfg: &'a TrainConfig,
    order: Vec<usize>,
}

impl<'a> EpochFeeder<'a> {
    fn new(data: &'a [Sample], cfg: &'a TrainConfig) -> Self {
        Self {
            data,
            cfg,
            order: (0..data.len()).collect(),
        }
    }

    fn batches(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<Sample>> {
        self.order.shuffle(rng);
        self.order
            .chunks(self.cfg.batch_size)
            .map(|idx| {
                idx.iter()
                    .map(|&i| {
                        let s = &self.data[i];
                        if self.cfg.augment {
                            random_affine(s, rng.random(), &self.cfg.augment_ranges)
                        } else {
                            s.clone()
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Default)]
struct EpochMeans {
    sum: BatchLosses,
    batches: usize,
}

impl EpochMeans {
    fn add(&mut self, b: BatchLosses, epoch: usize) -> Result<()> {
        if !(b.total.is_finite() && b.myo.is_finite() && b.scar.is_finite() && b.reg.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        self.sum.total += b.total;
        self.sum.myo += b.myo;
        self.sum.scar += b.scar;
        self.sum.reg += b.reg;
        self.batches += 1;
        Ok(())
    }

    fn record(&self, epoch: usize) -> EpochRecord {
        let n = self.batches.max(1) as f64;
        EpochRecord {
            epoch,
            total: self.sum.total / n,
            myo: self.sum.myo / n,
            scar: self.sum.scar / n,
            reg: self.sum.reg / n,
        }
    }
}

fn check_inputs(data: &[Sample], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    for s in data {
        cfg.arch.check_input(s.image.shape())?;
    }
    Ok(())
}

/// Trains the joint model.
pub fn train_jdl(data: &[Sample], cfg: &TrainConfig) -> Result<TrainedModel> {
    check_inputs(data, cfg)?;
    let mut myo = init_params::<f32>(&cfg.arch, Part::Full, cfg.seed)?;
    let mut scar = init_params::<f32>(&cfg.arch, Part::Full, cfg.seed.wrapping_add(1))?;
    let mut opt_m = AdamState::new(&myo, cfg.lr);
    let mut opt_s = AdamState::new(&scar, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut feeder = EpochFeeder::new(data, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut means = EpochMeans::default();
        for batch in feeder.batches(&mut rng) {
            if epoch <= cfg.warm_start_epochs {
                let inputs: Vec<_> = batch.iter().map(|s| (s.image.clone(), &s.myo)).collect();
                let (seg, reg, gm) = single_gradients(&myo, &inputs, &cfg.loss, cfg.loss.beta_m, &mut rng)?;
                means.add(
                    BatchLosses {
                        total: cfg.loss.lambda * seg + reg,
                        myo: seg,
                        scar: 0.0,
                        reg,
                    },
                    epoch,
                )?;
                adam_step(&mut myo, &gm, &mut opt_m)?;
                continue;
            }
            let (losses, gm, gs) =
                jdl_gradients(&myo, &scar, &batch, &cfg.loss, cfg.detach_mask, Mode::Train, &mut rng)?;
            means.add(losses, epoch)?;
            adam_step(&mut myo, &gm, &mut opt_m)?;
            adam_step(&mut scar, &gs, &mut opt_s)?;
        }
        history.push(means.record(epoch));
    }
    Ok(TrainedModel {
        params: ModelParams::Jdl { myo, scar },
        history,
        config: cfg.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn train_single(
    params: &mut NetworkParams<f32>,
    opt: &mut AdamState<f32>,
    feeder: &mut EpochFeeder<'_>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    beta: f64,
    cfg: &TrainConfig,
    mut input: impl FnMut(&Sample) -> (Tensor<f32>, bool),
) -> Result<EpochRecord> {
    let mut means = EpochMeans::default();
    for batch in feeder.batches(rng) {
        let mut is_myo = false;
        let inputs: Vec<_> = batch
            .iter()
            .map(|s| {
                let (img, myo_target) = input(s);
                is_myo = myo_target;
                (img, if myo_target { &s.myo } else { &s.scar })
            })
            .collect();
        let (seg, reg, grads) = single_gradients(params, &inputs, &cfg.loss, beta, rng)?;
        let (myo, scar) = if is_myo { (seg, 0.0) } else { (0.0, seg) };
        means.add(
            BatchLosses {
                total: seg + reg,
                myo,
                scar,
                reg,
            },
            epoch,
        )?;
        adam_step(params, &grads, opt)?;
    }
    Ok(means.record(epoch))
}

fn ground_truth_masked(s: &Sample) -> Tensor<f32> {
    let data = s
        .image
        .data()
        .iter()
        .zip(s.myo.bits())
        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
        .collect();
    Tensor::new(s.image.shape().to_vec(), data).expect("same shape")
}

/// Trains one of the baselines. Two-step scar inputs are logged to `log`.
pub fn train_audited(data: &[Sample], cfg: &TrainConfig, log: &AccessLog) -> Result<TrainedModel> {
    check_inputs(data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut feeder = EpochFeeder::new(data, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let params = match cfg.kind {
        PipelineKind::Jdl => return train_jdl(data, cfg),
        PipelineKind::Direct => {
            let mut scar = init_params::<f32>(&cfg.arch, Part::Full, cfg.seed.wrapping_add(1))?;
            let mut opt = AdamState::new(&scar, cfg.lr);
            for epoch in 1..=cfg.epochs {
                let rec = train_single(&mut scar, &mut opt, &mut feeder, &mut rng, epoch, cfg.loss.beta_s, cfg, |s| {
                    (s.image.clone(), false)
                })?;
                history.push(rec);
            }
            ModelParams::Direct { scar }
        }
        PipelineKind::TwoStep => {
            let (myo_epochs, _) = cfg.two_step_split();
            let mut myo = init_params::<f32>(&cfg.arch, Part::Full, cfg.seed)?;
            let mut scar = init_params::<f32>(&cfg.arch, Part::Full, cfg.seed.wrapping_add(1))?;
            let mut opt_m = AdamState::new(&myo, cfg.lr);
            let mut opt_s = AdamState::new(&scar, cfg.lr);
            for epoch in 1..=cfg.epochs {
                let rec = if epoch <= myo_epochs {
                    train_single(&mut myo, &mut opt_m, &mut feeder, &mut rng, epoch, cfg.loss.beta_m, cfg, |s| {
                        (s.image.clone(), true)
                    })?
                } else {
                    train_single(&mut scar, &mut opt_s, &mut feeder, &mut rng, epoch, cfg.loss.beta_s, cfg, |s| {
                        log.record(&s.id, MaskSource::GroundTruth, Stage::Train);
                        (ground_truth_masked(s), false)
                    })?
                };
                history.push(rec);
            }
            ModelParams::TwoStep { myo, scar }
        }
        PipelineKind::Mtl => {
            let mut p = MultiHeadParams::<f32>::init(&cfg.arch, cfg.seed)?;
            let mut opts = [
                AdamState::new(&p.encoder, cfg.lr),
                AdamState::new(&p.decoder_m, cfg.lr),
                AdamState::new(&p.decoder_s, cfg.lr),
            ];
            for epoch in 1..=cfg.epochs {
                let mut means = EpochMeans::default();
                for batch in feeder.batches(&mut rng) {
                    let (losses, [ge, gm, gs]) = mtl_gradients(&p, &batch, &cfg.loss, &mut rng)?;
                    means.add(losses, epoch)?;
                    adam_step(&mut p.encoder, &ge, &mut opts[0])?;
                    adam_step(&mut p.decoder_m, &gm, &mut opts[1])?;
                    adam_step(&mut p.decoder_s, &gs, &mut opts[2])?;
                }
                history.push(means.record(epoch));
            }
            ModelParams::Mtl(p)
        }
    };
    Ok(TrainedModel {
        params,
        history,
        config: cfg.clone(),
    })
}

/// Trains a baseline pipeline (`direct`, `two_step` or `mtl`).
pub fn train_baseline(kind: PipelineKind, data: &[Sample], cfg: &TrainConfig) -> Result<TrainedModel> {
    if kind == PipelineKind::Jdl {
        return Err(Error::Invalid("train_baseline does not train jdl; use train_jdl".into()));
    }
    let cfg = TrainConfig { kind, ..cfg.clone() };
    train_audited(data, &cfg, &AccessLog::new())
}

/// Trains whichever pipeline `cfg.kind` names.
pub fn train(data: &[Sample], cfg: &TrainConfig) -> Result<TrainedModel> {
    train_audited(data, cfg, &AccessLog::new())
}
