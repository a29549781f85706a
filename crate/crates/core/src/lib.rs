//! Numerical core for dual-encoder pre-training on image/text/label corpora.
//!
//! Everything in this crate is pure computation over owned buffers: the four
//! pre-training objectives with analytic gradients, desk-scale vision/text
//! encoders with manual backprop, prototype banks, zero-shot scoring, the
//! few-shot linear probe, the AdamW optimizer and the class-wise accuracy
//! metric. IO, file formats and orchestration live in the companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod batching;
pub mod encoders;
pub mod error;
pub mod mat;
pub mod mathx;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod probe;
pub mod prototypes;
pub mod rng;
pub mod transfer;

pub use error::{CoreError, Result};
pub use mat::Mat;
