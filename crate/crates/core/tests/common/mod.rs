//! Shared fixtures: the finite-difference suite and an oracle checkpoint.
#![allow(dead_code)]

use jointseg::losses::{l2_reg, seg_loss, total_loss, JointTerm, LossConfig};
use jointseg::nets::{init_params, unet_forward, Arch, NetworkParams, ParamNodes, Part};
use jointseg::pipelines::{message_pass, ModelParams};
use jointseg::tensor::gradcheck::{check_gradients, GradCheck};
use jointseg::tensor::{Graph, Mode, NodeId, Tensor};
use jointseg::{Mask, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_INSTANCES: u64 = 20;
pub const SIDE: usize = 16;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Values at least 0.01 away from zero.
fn off_kink(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = r.random_range(0.01..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Distinct values with pairwise gaps of at least 0.008, so no pooling
/// window is near a tie.
fn separated(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(r);
    let v: Vec<f64> = ranks
        .iter()
        .map(|&k| k as f64 * 0.01 + r.random_range(0.0..0.002) - n as f64 * 0.005)
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

pub fn random_mask(h: usize, w: usize, r: &mut ChaCha8Rng) -> Mask {
    Mask::from_fn(h, w, |_, _| r.random_bool(0.4))
}

/// `Σ weights ⊙ x` with fixed random weights, turning any node into a
/// scalar with a non-trivial gradient.
fn project(g: &mut Graph<f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let w = uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xabc));
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.reduce_sum(p))
}

fn all(_: usize, n: usize) -> Vec<usize> {
    (0..n).collect()
}

type Case = fn(u64) -> Result<GradCheck>;

fn unary(seed: u64, input: Tensor<f64>, op: fn(&mut Graph<f64>, NodeId) -> Result<NodeId>) -> Result<GradCheck> {
    check_gradients(&[input], FD_STEP, all, move |g, ids| {
        let y = op(g, ids[0])?;
        project(g, y, seed)
    })
}

fn binary(
    seed: u64,
    a: Tensor<f64>,
    b: Tensor<f64>,
    op: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
) -> Result<GradCheck> {
    check_gradients(&[a, b], FD_STEP, all, move |g, ids| {
        let y = op(g, ids[0], ids[1])?;
        project(g, y, seed)
    })
}

fn plane(seed: u64) -> Tensor<f64> {
    uniform(&[SIDE, SIDE], -1.0, 1.0, &mut rng(seed))
}

fn case_add(seed: u64) -> Result<GradCheck> {
    binary(seed, plane(seed), plane(seed + 1000), |g, a, b| g.add(a, b))
}

fn case_mul(seed: u64) -> Result<GradCheck> {
    binary(seed, plane(seed), plane(seed + 1000), |g, a, b| g.mul(a, b))
}

fn case_div(seed: u64) -> Result<GradCheck> {
    let den = uniform(&[SIDE, SIDE], 0.5, 2.0, &mut rng(seed + 1000));
    binary(seed, plane(seed), den, |g, a, b| g.div(a, b))
}

fn case_scale(seed: u64) -> Result<GradCheck> {
    unary(seed, plane(seed), |g, a| Ok(g.scale(a, -1.7)))
}

fn case_add_scalar(seed: u64) -> Result<GradCheck> {
    unary(seed, plane(seed), |g, a| {
        let b = g.add_scalar(a, 0.3);
        g.mul(b, b)
    })
}

fn case_relu(seed: u64) -> Result<GradCheck> {
    unary(seed, off_kink(&[SIDE, SIDE], &mut rng(seed)), |g, a| Ok(g.relu(a)))
}

fn case_sigmoid(seed: u64) -> Result<GradCheck> {
    let x = uniform(&[SIDE, SIDE], -4.0, 4.0, &mut rng(seed));
    unary(seed, x, |g, a| Ok(g.sigmoid(a)))
}

fn case_log(seed: u64) -> Result<GradCheck> {
    let x = uniform(&[SIDE, SIDE], 0.1, 2.0, &mut rng(seed));
    unary(seed, x, |g, a| Ok(g.log(a)))
}

fn case_reduce_sum(seed: u64) -> Result<GradCheck> {
    check_gradients(&[plane(seed)], FD_STEP, all, |g, ids| {
        let s = g.reduce_sum(ids[0]);
        g.mul(s, s)
    })
}

fn case_reshape(seed: u64) -> Result<GradCheck> {
    unary(seed, plane(seed), |g, a| g.reshape(a, &[4, 8, 8]))
}

fn case_max_pool(seed: u64) -> Result<GradCheck> {
    unary(seed, separated(&[2, SIDE, SIDE], &mut rng(seed)), |g, a| g.max_pool2(a))
}

fn case_upsample(seed: u64) -> Result<GradCheck> {
    let x = uniform(&[2, SIDE, SIDE], -1.0, 1.0, &mut rng(seed));
    unary(seed, x, |g, a| g.upsample2(a))
}

fn case_concat(seed: u64) -> Result<GradCheck> {
    let a = uniform(&[2, SIDE, SIDE], -1.0, 1.0, &mut rng(seed));
    let b = uniform(&[3, SIDE, SIDE], -1.0, 1.0, &mut rng(seed + 1000));
    binary(seed, a, b, |g, a, b| g.concat(a, b))
}

fn case_dropout(seed: u64) -> Result<GradCheck> {
    check_gradients(&[plane(seed)], FD_STEP, all, move |g, ids| {
        let y = g.dropout(ids[0], 0.39, Mode::Train, &mut rng(seed + 7))?;
        project(g, y, seed)
    })
}

fn conv_case(seed: u64, k: usize, padding: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let x = uniform(&[2, SIDE, SIDE], -1.0, 1.0, &mut r);
    let w = uniform(&[3, 2, k, k], -0.5, 0.5, &mut r);
    let b = uniform(&[3], -0.5, 0.5, &mut r);
    check_gradients(&[x, w, b], FD_STEP, all, move |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], padding)?;
        project(g, y, seed)
    })
}

fn case_conv3_pad1(seed: u64) -> Result<GradCheck> {
    conv_case(seed, 3, 1)
}

fn case_conv3_pad0(seed: u64) -> Result<GradCheck> {
    conv_case(seed, 3, 0)
}

fn case_conv1(seed: u64) -> Result<GradCheck> {
    conv_case(seed, 1, 0)
}

fn case_softmax(seed: u64) -> Result<GradCheck> {
    let x = uniform(&[3, SIDE, SIDE], -3.0, 3.0, &mut rng(seed));
    unary(seed, x, |g, a| g.softmax_channel(a))
}

fn case_channel(seed: u64) -> Result<GradCheck> {
    let x = uniform(&[3, SIDE, SIDE], -1.0, 1.0, &mut rng(seed));
    unary(seed, x, |g, a| g.channel(a, 1))
}

fn case_seg_loss(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let logits = uniform(&[2, SIDE, SIDE], -3.0, 3.0, &mut r);
    let target = random_mask(SIDE, SIDE, &mut r);
    check_gradients(&[logits], FD_STEP, all, move |g, ids| {
        let p = g.softmax_channel(ids[0])?;
        seg_loss(g, &target, p, 1.0, 1e-6)
    })
}

fn case_l2(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let a = uniform(&[SIDE, SIDE], -1.0, 1.0, &mut r);
    let b = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    check_gradients(&[a, b], FD_STEP, all, |g, ids| {
        let nodes = ParamNodes::from_ids([("a".to_string(), ids[0]), ("b".to_string(), ids[1])]);
        Ok(l2_reg(g, &[&nodes]))
    })
}

fn case_message_pass(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let image = uniform(&[1, SIDE, SIDE], 0.0, 1.0, &mut r);
    let prob = uniform(&[SIDE, SIDE], 0.0, 1.0, &mut r);
    binary(seed, image, prob, message_pass)
}

/// Network used by the composite check: depth 2, two base channels.
pub fn small_arch() -> Arch {
    Arch {
        depth: 2,
        base_channels: 2,
        ..Arch::default()
    }
}

/// Full joint objective on a two-image batch, both networks in training
/// mode with dropout, probing three coordinates of every parameter tensor.
fn case_composite(seed: u64) -> Result<GradCheck> {
    let arch = small_arch();
    let mut myo: NetworkParams<f64> = init_params(&arch, Part::Full, seed)?;
    let mut scar: NetworkParams<f64> = init_params(&arch, Part::Full, seed + 500)?;
    let mut r = rng(seed);
    // zero biases leave dead units exactly on the ReLU kink
    for (name, t) in myo.iter_mut().chain(scar.iter_mut()) {
        if name.ends_with(".b") {
            *t = uniform(t.shape(), -0.2, 0.2, &mut r);
        }
    }
    let images: Vec<Tensor<f64>> = (0..2).map(|_| uniform(&[1, SIDE, SIDE], 0.0, 1.0, &mut r)).collect();
    let myo_t: Vec<Mask> = (0..2).map(|_| random_mask(SIDE, SIDE, &mut r)).collect();
    let scar_t: Vec<Mask> = myo_t
        .iter()
        .map(|m| Mask::from_fn(SIDE, SIDE, |y, x| m.get(y, x) && r.random_bool(0.5)))
        .collect();
    // strong regularisation weights so that term is visible in the check
    let cfg = LossConfig {
        beta_m: 0.01,
        beta_s: 0.02,
        ..LossConfig::default()
    };

    let names: Vec<String> = myo
        .iter()
        .map(|(n, _)| format!("m.{n}"))
        .chain(scar.iter().map(|(n, _)| format!("s.{n}")))
        .collect();
    let inputs: Vec<Tensor<f64>> = myo.iter().chain(scar.iter()).map(|(_, t)| t.clone()).collect();
    let n_myo = myo.len();
    let mut pick = rng(seed + 99);
    check_gradients(
        &inputs,
        FD_STEP,
        |_, n| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut pick);
            idx.truncate(3);
            idx
        },
        move |g, ids| {
            let strip = |s: &str| s[2..].to_string();
            let pm = ParamNodes::from_ids(names[..n_myo].iter().map(|s| strip(s)).zip(ids[..n_myo].iter().copied()));
            let ps = ParamNodes::from_ids(names[n_myo..].iter().map(|s| strip(s)).zip(ids[n_myo..].iter().copied()));
            let mut dr = rng(seed + 3);
            let mut probs = Vec::new();
            for img in &images {
                let x = g.constant(img.clone());
                let lm = unet_forward(g, &pm, &arch, x, Mode::Train, &mut dr)?;
                let p_m = g.softmax_channel(lm)?;
                let fg = g.channel(p_m, 1)?;
                let masked = message_pass(g, x, fg)?;
                let ls = unet_forward(g, &ps, &arch, masked, Mode::Train, &mut dr)?;
                probs.push((p_m, g.softmax_channel(ls)?));
            }
            let terms: Vec<JointTerm<'_>> = (0..images.len())
                .map(|i| JointTerm {
                    myo_target: &myo_t[i],
                    myo_prob: probs[i].0,
                    scar_target: &scar_t[i],
                    scar_prob: probs[i].1,
                })
                .collect();
            Ok(total_loss(g, &terms, &[&pm], &[&ps], &cfg)?.total)
        },
    )
}

/// Every differentiable operation plus the joint objective.
pub fn gradient_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", case_add as Case),
        ("mul", case_mul),
        ("div", case_div),
        ("scale", case_scale),
        ("add_scalar", case_add_scalar),
        ("relu", case_relu),
        ("sigmoid", case_sigmoid),
        ("log", case_log),
        ("reduce_sum", case_reduce_sum),
        ("reshape", case_reshape),
        ("max_pool2", case_max_pool),
        ("upsample2", case_upsample),
        ("concat", case_concat),
        ("dropout", case_dropout),
        ("conv2d_3x3_pad1", case_conv3_pad1),
        ("conv2d_3x3_pad0", case_conv3_pad0),
        ("conv2d_1x1", case_conv1),
        ("softmax_channel", case_softmax),
        ("channel", case_channel),
        ("seg_loss", case_seg_loss),
        ("l2_reg", case_l2),
        ("message_pass", case_message_pass),
        ("joint_objective", case_composite),
    ]
}

/// Aggregate of one case over all instances.
#[derive(Debug, Clone, Copy)]
pub struct CaseResult {
    pub worst: f64,
    pub coordinates: usize,
    pub skipped: usize,
}

impl CaseResult {
    /// Worst error under tolerance, with under 5% of probes lost to kinks.
    pub fn passes(&self) -> bool {
        self.worst < FD_TOL && self.coordinates > 0 && self.skipped * 20 < self.coordinates + self.skipped
    }
}

pub fn run_case(case: Case) -> Result<CaseResult> {
    let mut out = CaseResult {
        worst: 0.0,
        coordinates: 0,
        skipped: 0,
    };
    for seed in 0..FD_INSTANCES {
        let c = case(seed)?;
        out.worst = out.worst.max(c.max_rel_error);
        out.coordinates += c.coordinates;
        out.skipped += c.skipped;
    }
    Ok(out)
}

/// Direct-pipeline U-net whose scar output is exactly `intensity > 0.7`
/// (up to a sliver of probability), built by hand.
///
/// The first encoder conv copies the image into channel 0 as
/// `ReLU(x − 0.7)`; that skip path survives unchanged to the last decoder
/// level, where a ReLU unit scales it by 1000 into the foreground logit.
/// Every other weight is zero, so the deeper levels output constants.
pub fn oracle_direct(arch: &Arch) -> ModelParams {
    let mut p: NetworkParams<f32> = init_params(arch, Part::Full, 0).unwrap();
    for (_, t) in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let centre = |t: &mut Tensor<f32>, f: usize, c: usize, v: f32| {
        let s = t.shape().to_vec();
        let (cin, k) = (s[1], s[2]);
        let idx = ((f * cin + c) * k + k / 2) * k + k / 2;
        t.data_mut()[idx] = v;
    };
    centre(p.get_mut("enc0.c1.w").unwrap(), 0, 0, 1.0);
    p.get_mut("enc0.c1.b").unwrap().data_mut()[0] = -0.7;
    centre(p.get_mut("enc0.c2.w").unwrap(), 0, 0, 1.0);
    // dec0 input is [upsampled (b channels), skip (b channels)]
    let b = arch.base_channels;
    centre(p.get_mut("dec0.c1.w").unwrap(), 0, b, 1.0);
    centre(p.get_mut("dec0.c2.w").unwrap(), 0, 0, 1.0);
    let head = p.get_mut("head.w").unwrap();
    centre(head, 1, 0, 1000.0);
    p.get_mut("head.b").unwrap().data_mut()[0] = 0.01;
    ModelParams::Direct { scar: p }
}
