//! Unsupervised graph domain adaptation through causal/spurious feature
//! disentanglement, class-adaptive pseudo-labelling and generative
//! intervention in representation space.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradcore`]: dense tensors, reverse-mode differentiation, Adam.
//! * [`graphdata`]: graphs, TUDataset I/O, density splits, synthetic shifts,
//!   block-diagonal batching.
//! * [`encoder`]: two-layer GCN with mean readout and linear heads.
//! * [`disentangler`]: causal/spurious projections and the mutual-information
//!   objectives.
//! * [`intervenor`]: the generator, cross-domain spurious swaps and the
//!   invariance loss.
//! * [`calibrator`]: confidence scores, class-adaptive thresholds and the
//!   supervised losses.
//! * [`trainer`]: warm-up, adaptation, evaluation, ablations, bound audit and
//!   the scaling benchmark.
//! * [`cli`]: argument/config handling and command dispatch for the `slogan`
//!   binary.

pub mod calibrator;
pub mod cli;
pub mod disentangler;
pub mod encoder;
pub mod error;
pub mod gradcore;
pub mod graphdata;
pub mod intervenor;
pub mod trainer;

pub use error::{Error, Result};
pub use gradcore::Real;
