//! Detection of ordered facial-attribute edit sequences.
//!
//! A from-scratch `f64` autodiff core ([`numerics`]) drives a frequency-aware
//! encoder-decoder transformer ([`model`]) that reads an image and emits the
//! ordered list of edited attributes. Around it sit the frequency transforms,
//! a synthetic data generator with manifest I/O, the evaluation metrics,
//! robustness perturbations, and a sharpness-aware trainer.

pub mod dataset;
pub mod error;
pub mod frequency;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod robustness;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::{AttributeLabel, EditSequence, Token};
pub use numerics::{Tape, Tensor, Var};
