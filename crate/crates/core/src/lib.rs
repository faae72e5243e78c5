//! Link-level NR PRACH simulation and interference detection.
//!
//! The signal chain runs bottom-up through these modules:
//!
//! - [`zc`]: Zadoff-Chu roots and cyclically shifted preambles
//! - [`waveform`]: format-0 OFDM burst (CP + sequence + guard) and TX impairments
//! - [`channel`]: ETU Rayleigh fading, co-channel PRACH interference and AWGN
//! - [`receiver`]: correlation receiver producing RAPID and timing offset
//! - [`dataset`]: labeled feature tensors over an SNR x interference grid
//! - [`cnn`]: residual convolutional classifier with explicit backprop
//! - [`metrics`]: confusion matrices, derived scores and the receiver baseline
//! - [`cli`]: the `prach-sentinel` experiment driver

pub mod channel;
pub mod cli;
pub mod cnn;
pub mod dataset;
mod dsp;
mod error;
pub mod metrics;
pub mod receiver;
pub mod scenario;
pub mod seed;
pub mod waveform;
pub mod zc;

pub use error::{Error, Result};

/// Complex baseband sample.
pub type C64 = num_complex::Complex64;

/// Contiguous run of complex baseband samples.
pub type ComplexBuffer = Vec<C64>;
