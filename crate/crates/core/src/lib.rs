//! Desk-scale trainable simulator of a semantic-HARQ image transmission link.
//!
//! The chain: a learned joint source-channel encoder produces semantic
//! features, an adaptive mask truncates them to a target ratio, a check
//! encoder emits a short reparameterized Gaussian codeword, and both travel
//! an AWGN or Rayleigh channel. The receiver jointly decodes image and check
//! codewords, estimates perceptual quality, and an RL agent decides per
//! sample whether to request the single permitted recovery-refinement
//! retransmission. Evaluation reports average and tail PSNR, perceptual
//! score, outage probability, and retransmission ratio.

pub mod agent;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod frame;
pub mod harq;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
