//! Many-to-many reassembly of features (M2MRF) for tiny-object segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`kernels`], [`autograd`], [`param`], [`gradcheck`]: a small
//!   `f64` tensor engine with reverse-mode differentiation and SGD;
//! - [`rf`]: the M2MRF operator, its one-step/cascade compositions and the
//!   many-to-one baselines;
//! - [`net`]: a multi-resolution fusion network with pluggable operators,
//!   Dice loss and the trainer;
//! - [`metrics`]: AUPR, F-score and IoU;
//! - [`synth`]: a deterministic synthetic lesion dataset.

pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod net;
pub mod param;
pub mod rf;
pub mod synth;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
