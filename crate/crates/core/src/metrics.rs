//! Overlap metrics on binary masks and their boxplot-style summaries.
//!
//! All counts are exact integers; each metric is a single final division.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// `(|A∩B|, |A|, |B|)`.
pub fn overlap_counts(a: &Mask, b: &Mask) -> Result<(u64, u64, u64)> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: vec![a.height(), a.width()],
            right: vec![b.height(), b.width()],
        });
    }
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as u64;
        na += x as u64;
        nb += y as u64;
    }
    Ok((inter, na, nb))
}

/// Dice similarity `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    Ok(if na + nb == 0 {
        1.0
    } else {
        (2 * inter) as f64 / (na + nb) as f64
    })
}

/// Precision and recall of a prediction against ground truth, with flags for
/// the cases where the ratio has an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// `P = |S∩Ŝ|/|Ŝ|`, `R = |S∩Ŝ|/|S|`.
///
/// Empty-set conventions: both empty gives (1, 1); empty prediction with
/// non-empty truth gives (0, 0) with precision flagged undefined; empty
/// truth with a non-empty prediction gives (0, 0) with recall flagged.
pub fn precision_recall(truth: &Mask, pred: &Mask) -> Result<PrecisionRecall> {
    let (inter, ns, np) = overlap_counts(truth, pred)?;
    Ok(match (ns, np) {
        (0, 0) => PrecisionRecall {
            precision: 1.0,
            recall: 1.0,
            precision_defined: true,
            recall_defined: true,
        },
        (_, 0) => PrecisionRecall {
            precision: 0.0,
            recall: 0.0,
            precision_defined: false,
            recall_defined: true,
        },
        (0, _) => PrecisionRecall {
            precision: 0.0,
            recall: 0.0,
            precision_defined: true,
            recall_defined: false,
        },
        _ => PrecisionRecall {
            precision: inter as f64 / np as f64,
            recall: inter as f64 / ns as f64,
            precision_defined: true,
            recall_defined: true,
        },
    })
}

/// Scores of one predicted mask against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: String,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

impl PairScore {
    pub fn score(id: impl Into<String>, truth: &Mask, pred: &Mask) -> Result<Self> {
        let pr = precision_recall(truth, pred)?;
        Ok(Self {
            id: id.into(),
            dice: dice(truth, pred)?,
            precision: pr.precision,
            recall: pr.recall,
            precision_defined: pr.precision_defined,
            recall_defined: pr.recall_defined,
        })
    }

    /// `""`, `"P"`, `"R"` or `"PR"` naming the undefined components.
    pub fn flags(&self) -> String {
        let mut f = String::new();
        if !self.precision_defined {
            f.push('P');
        }
        if !self.recall_defined {
            f.push('R');
        }
        f
    }
}

/// Location statistics of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub excluded: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q·(n−1)`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stats {
    /// `None` when every value was excluded.
    pub fn from_values(values: &[f64], excluded: usize) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            excluded,
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dice: Option<Stats>,
    pub precision: Option<Stats>,
    pub recall: Option<Stats>,
}

/// Mean, median, quartiles and range per metric. Entries whose precision or
/// recall is undefined are left out of that metric and counted as excluded.
pub fn summarize(scores: &[PairScore]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot summarize an empty score list".into()));
    }
    let pick = |keep: fn(&PairScore) -> bool, get: fn(&PairScore) -> f64| {
        let vals: Vec<f64> = scores.iter().filter(|s| keep(s)).map(get).collect();
        Stats::from_values(&vals, scores.len() - vals.len())
    };
    Ok(Summary {
        dice: pick(|_| true, |s| s.dice),
        precision: pick(|s| s.precision_defined, |s| s.precision),
        recall: pick(|s| s.recall_defined, |s| s.recall),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn m(bits: &[u8]) -> Mask {
        Mask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = m(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &m(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&m(&[0; 4]), &m(&[0; 4])).unwrap(), 1.0);
        // |A|=4, |B|=4, |A∩B|=2
        let a = m(&[1, 1, 1, 1, 0, 0]);
        let b = m(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!(dice(&a, &m(&[1])).is_err());
    }

    #[test]
    fn precision_recall_cases() {
        let s = m(&[1, 1, 0]);
        let pr = precision_recall(&s, &s).unwrap();
        assert_eq!((pr.precision, pr.recall), (1.0, 1.0));

        let sub = precision_recall(&s, &m(&[1, 0, 0])).unwrap();
        assert_eq!(sub.precision, 1.0);

        // |S|=4, |Ŝ|=2, |S∩Ŝ|=1
        let s = m(&[1, 1, 1, 1, 0]);
        let p = m(&[0, 0, 0, 1, 1]);
        let pr = precision_recall(&s, &p).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.5, 0.25));
    }

    #[test]
    fn empty_set_conventions() {
        let pr = precision_recall(&m(&[0, 0]), &m(&[0, 0])).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.precision_defined, pr.recall_defined), (1.0, 1.0, true, true));
        let pr = precision_recall(&m(&[1, 0]), &m(&[0, 0])).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.precision_defined, pr.recall_defined), (0.0, 0.0, false, true));
        let pr = precision_recall(&m(&[0, 0]), &m(&[0, 1])).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.precision_defined, pr.recall_defined), (0.0, 0.0, true, false));
    }

    fn score(v: f64) -> PairScore {
        PairScore {
            id: String::new(),
            dice: v,
            precision: v,
            recall: v,
            precision_defined: true,
            recall_defined: true,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[score(0.2), score(0.4), score(0.6)]).unwrap();
        let d = s.dice.unwrap();
        assert!((d.mean - 0.4).abs() < 1e-15);
        assert!((d.median - 0.4).abs() < 1e-15);

        let s = summarize(&[score(0.7)]).unwrap().dice.unwrap();
        assert_eq!([s.mean, s.median, s.q1, s.q3, s.min, s.max], [0.7; 6]);

        let vals = [0.0, 0.25, 0.5, 0.75, 1.0];
        let s = summarize(&vals.map(score)).unwrap().dice.unwrap();
        assert_eq!((s.q1, s.median, s.q3), (0.25, 0.5, 0.75));

        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summary_excludes_undefined_entries() {
        let mut a = score(0.5);
        a.recall_defined = false;
        a.recall = 0.0;
        let s = summarize(&[a, score(1.0)]).unwrap();
        let r = s.recall.unwrap();
        assert_eq!((r.count, r.excluded, r.mean), (1, 1, 1.0));
        assert_eq!(s.dice.unwrap().count, 2);
    }

    fn mask_strategy() -> impl Strategy<Value = (Mask, Mask)> {
        (proptest::collection::vec(0u8..2, 64), proptest::collection::vec(0u8..2, 64))
            .prop_map(|(a, b)| (Mask::new(8, 8, a).unwrap(), Mask::new(8, 8, b).unwrap()))
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_f1((a, b) in mask_strategy()) {
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let ab = precision_recall(&a, &b).unwrap();
            let ba = precision_recall(&b, &a).unwrap();
            prop_assert_eq!(ab.precision, ba.recall);
            if a.count() > 0 && b.count() > 0 && ab.precision + ab.recall > 0.0 {
                let f1 = 2.0 * ab.precision * ab.recall / (ab.precision + ab.recall);
                prop_assert!((dice(&a, &b).unwrap() - f1).abs() < 1e-12);
            }
        }
    }
}
