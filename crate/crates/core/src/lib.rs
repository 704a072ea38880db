//! Joint myocardium and scar segmentation.
//!
//! Two encoder–decoder networks are trained together: the first predicts a
//! myocardium probability map, which multiplies the input image before it
//! reaches the second (scar) network. Gradients of the scar loss flow back
//! through that product into the myocardium network. Three baselines
//! (direct, two-step and shared-encoder multitask) are provided for
//! comparison, together with a seeded synthetic data generator, evaluation
//! metrics and a small CLI.
//!
//! Everything runs on the CPU through a small reverse-mode tensor engine in
//! [`tensor`].

pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mask;
pub mod nets;
pub mod optim;
pub mod pipelines;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::Mask;
