//! Segmentation loss (cross-entropy plus weighted soft Dice), L2
//! regularisation and the joint objective
//!
//! ```text
//! L = λ Σ L_m(M, M̂) + Σ L_s(S, Ŝ) + β_M ‖θ_M‖² + β_S ‖θ_S‖²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nets::ParamNodes;
use crate::tensor::{Graph, NodeId, Real, Tensor};

/// Loss weights. Defaults are the tuned JDL values with `w = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w: f64,
    pub eps: f64,
    pub lambda: f64,
    pub beta_m: f64,
    pub beta_s: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            eps: 1e-6,
            lambda: 1.02,
            beta_m: 5.58e-6,
            beta_s: 5.58e-6,
        }
    }
}

impl LossConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg)
            }
        };
        need(self.w >= 0.0 && self.w.is_finite(), format!("w must be >= 0, got {}", self.w));
        need(self.eps > 0.0 && self.eps.is_finite(), format!("eps must be > 0, got {}", self.eps));
        need(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            format!("lambda must be >= 0, got {}", self.lambda),
        );
        need(
            self.beta_m >= 0.0 && self.beta_m.is_finite(),
            format!("beta_m must be >= 0, got {}", self.beta_m),
        );
        need(
            self.beta_s >= 0.0 && self.beta_s.is_finite(),
            format!("beta_s must be >= 0, got {}", self.beta_s),
        );
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

const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Cross-entropy over both channels (averaged per pixel) plus
/// `w · (1 − (2ΣYŶ + ε)/(ΣY + ΣŶ + ε))` on the foreground channel.
///
/// `prob` must be a 2×H×W softmax output matching `target`.
pub fn seg_loss<T: Real>(g: &mut Graph<T>, target: &Mask, prob: NodeId, w: f64, eps: f64) -> Result<NodeId> {
    let (h, wd) = target.dims();
    if g.shape(prob) != [2, h, wd] {
        return Err(Error::ShapeMismatch {
            op: "seg_loss",
            left: vec![2, h, wd],
            right: g.shape(prob).to_vec(),
        });
    }
    let hw = h * wd;
    let p = g.value(prob).data();
    for pixel in 0..hw {
        let sum = p[pixel].as_f64() + p[hw + pixel].as_f64();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { pixel, sum });
        }
    }

    let mut onehot = Vec::with_capacity(2 * hw);
    onehot.extend(target.bits().iter().map(|&b| T::of(1.0 - b as f64)));
    onehot.extend(target.bits().iter().map(|&b| T::of(b as f64)));
    let onehot = g.constant(Tensor::new(vec![2, h, wd], onehot)?);
    let logp = g.log(prob);
    let ylogp = g.mul(onehot, logp)?;
    let s = g.reduce_sum(ylogp);
    let ce = g.scale(s, T::of(-1.0 / hw as f64));

    let fg = g.channel(prob, 1)?;
    let y = g.constant(target.to_tensor());
    let yfg = g.mul(y, fg)?;
    let inter = g.reduce_sum(yfg);
    let inter2 = g.scale(inter, T::of(2.0));
    let num = g.add_scalar(inter2, T::of(eps));
    let pred_sum = g.reduce_sum(fg);
    let den = g.add_scalar(pred_sum, T::of(target.count() as f64 + eps));
    let ratio = g.div(num, den)?;
    let neg = g.scale(ratio, T::of(-w));
    let dice = g.add_scalar(neg, T::of(w));

    g.add(ce, dice)
}

/// Sum of squares of every bound parameter.
pub fn l2_reg<T: Real>(g: &mut Graph<T>, params: &[&ParamNodes]) -> NodeId {
    let mut acc: Option<NodeId> = None;
    for ids in params {
        for id in ids.ids() {
            let sq = g.mul(id, id).expect("same node");
            let s = g.reduce_sum(sq);
            acc = Some(match acc {
                Some(a) => g.add(a, s).expect("scalars"),
                None => s,
            });
        }
    }
    acc.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero())))
}

/// One sample's contribution to the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointTerm<'a> {
    pub myo_target: &'a Mask,
    pub myo_prob: NodeId,
    pub scar_target: &'a Mask,
    pub scar_prob: NodeId,
}

/// Node handles for the pieces of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct TotalLoss {
    pub total: NodeId,
    /// `Σ L_m`, unweighted.
    pub myo: NodeId,
    /// `Σ L_s`.
    pub scar: NodeId,
    /// `β_M Reg(θ_M) + β_S Reg(θ_S)`.
    pub reg: NodeId,
}

fn sum_nodes<T: Real>(g: &mut Graph<T>, ids: &[NodeId]) -> Result<NodeId> {
    let mut acc = match ids.first() {
        Some(&first) => first,
        None => return Err(Error::Invalid("empty batch".into())),
    };
    for &id in &ids[1..] {
        acc = g.add(acc, id)?;
    }
    Ok(acc)
}

/// `λ Σ L_m + Σ L_s + β_M Reg(θ_M) + β_S Reg(θ_S)` over a batch.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    terms: &[JointTerm<'_>],
    params_m: &[&ParamNodes],
    params_s: &[&ParamNodes],
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    let mut lm = Vec::with_capacity(terms.len());
    let mut ls = Vec::with_capacity(terms.len());
    for t in terms {
        lm.push(seg_loss(g, t.myo_target, t.myo_prob, cfg.w, cfg.eps)?);
        ls.push(seg_loss(g, t.scar_target, t.scar_prob, cfg.w, cfg.eps)?);
    }
    let myo = sum_nodes(g, &lm)?;
    let scar = sum_nodes(g, &ls)?;
    let reg_m = l2_reg(g, params_m);
    let reg_m = g.scale(reg_m, T::of(cfg.beta_m));
    let reg_s = l2_reg(g, params_s);
    let reg_s = g.scale(reg_s, T::of(cfg.beta_s));
    let reg = g.add(reg_m, reg_s)?;
    let weighted = g.scale(myo, T::of(cfg.lambda));
    let total = g.add(weighted, scar)?;
    let total = g.add(total, reg)?;
    Ok(TotalLoss { total, myo, scar, reg })
}
