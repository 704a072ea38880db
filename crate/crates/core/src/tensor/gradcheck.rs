//! Central finite-difference verification of [`Graph::backward`].

use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coordinates: usize,
    /// Coordinates left out because `x ± h` crossed a ReLU, pooling or
    /// log-floor boundary, where the derivative is undefined.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(build: &F, inputs: &[Tensor<f64>], trainable: bool) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let root = build(&mut g, &ids)?;
    if g.value(root).numel() != 1 {
        return Err(Error::NonScalarRoot(g.shape(root).to_vec()));
    }
    Ok((g, ids, root))
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences with step `h`.
///
/// `select(input, numel)` picks the flat indices to probe for each input;
/// pass `|_, n| (0..n).collect()` to probe every coordinate. `build` must be
/// deterministic (reseed any RNG inside it). Probes whose two evaluations
/// take a different branch of a non-smooth operation than the unperturbed
/// pass are counted in [`GradCheck::skipped`] instead of compared.
pub fn check_gradients<F, S>(inputs: &[Tensor<f64>], h: f64, mut select: S, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
    S: FnMut(usize, usize) -> Vec<usize>,
{
    let (mut g, ids, root) = evaluate(&build, inputs, true)?;
    let pattern = g.branch_pattern();
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map_or_else(|| vec![0.0; g.value(id).numel()], <[f64]>::to_vec))
        .collect();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        skipped: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in select(i, input.numel()) {
            let x = input.data()[j];
            probe[i].data_mut()[j] = x + h;
            let up = evaluate(&build, &probe, false)?;
            probe[i].data_mut()[j] = x - h;
            let down = evaluate(&build, &probe, false)?;
            probe[i].data_mut()[j] = x;
            if up.0.branch_pattern() != pattern || down.0.branch_pattern() != pattern {
                out.skipped += 1;
                continue;
            }
            let f = |(g, _, r): &(Graph<f64>, Vec<NodeId>, NodeId)| g.value(*r).data()[0];
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            let a = analytic[i][j];
            let err = relative_error(a, numeric);
            out.coordinates += 1;
            if err >= out.max_rel_error || err.is_nan() {
                out.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                out.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(out)
}
