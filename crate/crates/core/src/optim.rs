//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::nets::{Gradients, NetworkParams};
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for one [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    lr: f64,
    step: u64,
    moments: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>, lr: f64) -> Self {
        let moments = params
            .iter()
            .map(|(name, t)| (name.to_string(), vec![T::zero(); t.numel()], vec![T::zero(); t.numel()]))
            .collect();
        Self { lr, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &[T]> {
        self.moments.iter().map(|(_, _, v)| v.as_slice())
    }
}

/// One Adam update of every parameter in `params`.
pub fn adam_step<T: Real>(params: &mut NetworkParams<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    // validate before touching anything so a failed step leaves state intact
    for ((name, t), (mname, m, _)) in params.iter().zip(&state.moments) {
        if name != mname || m.len() != t.numel() {
            return Err(Error::Invalid(format!("optimizer state does not match parameter `{name}`")));
        }
        match grads.get(name) {
            Some(g) if g.len() == t.numel() => {}
            Some(g) => {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: vec![t.numel()],
                    right: vec![g.len()],
                })
            }
            None => return Err(Error::MissingGradient(name.to_string())),
        }
    }
    if params.len() != state.moments.len() {
        return Err(Error::Invalid("optimizer state does not match parameter count".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let c1 = T::of(1.0 - BETA1.powi(t));
    let c2 = T::of(1.0 - BETA2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(EPSILON));
    let one = T::one();
    for ((name, theta), (_, m, v)) in params.iter_mut().zip(state.moments.iter_mut()) {
        let g = grads.get(name).expect("checked above");
        for (((p, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;
    use crate::nets::{init_params, Arch, Part};

    fn tiny() -> NetworkParams<f64> {
        let arch = Arch {
            depth: 1,
            base_channels: 1,
            ..Arch::default()
        };
        init_params(&arch, Part::Full, 2).unwrap()
    }

    fn grads_with(p: &NetworkParams<f64>, mut f: impl FnMut(usize) -> f64) -> Gradients<f64> {
        let mut k = 0;
        Gradients(
            p.iter()
                .map(|(n, t)| {
                    let g = (0..t.numel())
                        .map(|_| {
                            k += 1;
                            f(k)
                        })
                        .collect();
                    (n.to_string(), g)
                })
                .collect(),
        )
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = AdamState::new(&p, 0.1);
        let g = grads_with(&p, |_| 0.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_from_zero_hand_value() {
        let mut p = tiny();
        for (_, t) in p.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let mut s = AdamState::new(&p, 0.1);
        let g = grads_with(&p, |_| 1.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        for (_, t) in p.iter() {
            for &v in t.data() {
                assert!((v - expected).abs() < 1e-15, "{v}");
            }
        }
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = tiny();
        let mut s = AdamState::new(&p, 0.1);
        let mut g = grads_with(&p, |_| 1.0);
        g.0.remove("head.w");
        match adam_step(&mut p, &g, &mut s) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "head.w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.step_count(), 0);
        let empty = Gradients(HashMap::new());
        assert!(adam_step(&mut p, &empty, &mut s).is_err());
    }

    #[test]
    fn step_moves_against_gradient_sign() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = AdamState::new(&p, 0.01);
        let g = grads_with(&p, |k| if k % 3 == 0 { -0.7 } else { 0.2 * k as f64 });
        adam_step(&mut p, &g, &mut s).unwrap();
        for ((name, a), (_, b)) in before.iter().zip(p.iter()) {
            for ((x0, x1), gi) in a.data().iter().zip(b.data()).zip(g.get(name).unwrap()) {
                assert_eq!((x1 - x0).signum(), -gi.signum());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn displacement_bounded_by_learning_rate(seed in 0u64..1000, lr in 1e-4f64..1e-1) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut p = tiny();
            let mut s = AdamState::new(&p, lr);
            for step in 1..=30 {
                let g = grads_with(&p, |_| rng.random_range(-5.0..5.0));
                let before = p.clone();
                adam_step(&mut p, &g, &mut s).unwrap();
                prop_assert!(s.second_moments().all(|v| v.iter().all(|&x| x >= 0.0)));
                if step >= 10 {
                    for ((_, a), (_, b)) in before.iter().zip(p.iter()) {
                        for (x0, x1) in a.data().iter().zip(b.data()) {
                            // Jensen: |m̂|/√v̂ ≤ sqrt(max_k a_k/b_k) ≈ 1.75 for t ≤ 30
                            prop_assert!((x1 - x0).abs() <= lr * 1.75);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = tiny();
            let mut s = AdamState::new(&p, 1e-3);
            for i in 0..5 {
                let g = grads_with(&p, |k| ((k * 31 + i) % 7) as f64 - 3.0);
                adam_step(&mut p, &g, &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
