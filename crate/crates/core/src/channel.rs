//! Physical-channel simulation: AWGN and block-fading Rayleigh with coherent
//! equalization at the receiver.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(Error::Config(format!("unknown channel kind '{other}'"))),
        }
    }
}

impl ChannelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }
}

/// Noise standard deviation for unit average signal power:
/// `sqrt(10^(-snr_db/10))`.
pub fn snr_to_noise_std(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0).sqrt()
}

/// One realized channel: a gain (1 for AWGN, Rayleigh-distributed with
/// `E[h^2] = 1` otherwise) and the calibrated noise level. Block fading: one
/// gain per codeword per round.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub gain: f64,
    pub noise_std: f64,
}

impl ChannelRealization {
    pub fn draw<R: Rng>(kind: ChannelKind, snr_db: f64, rng: &mut R) -> Self {
        let gain = match kind {
            ChannelKind::Awgn => 1.0,
            ChannelKind::Rayleigh => {
                // h = sqrt((g1^2 + g2^2)/2) with g ~ N(0,1) gives E[h^2] = 1
                let n = Normal::new(0.0, 1.0).unwrap();
                let (g1, g2): (f64, f64) = (n.sample(rng), n.sample(rng));
                ((g1 * g1 + g2 * g2) / 2.0).sqrt()
            }
        };
        ChannelRealization { kind, snr_db, gain, noise_std: snr_to_noise_std(snr_db) }
    }

    /// Effective noise std after coherent equalization: the receiver divides
    /// by the known gain, so fading amplifies noise by `1/h`.
    pub fn equalized_noise_std(&self) -> f64 {
        self.noise_std / self.gain
    }

    /// Transmit a power-normalized codeword. Only the first `active` symbols
    /// are on the air; masked positions are not transmitted and arrive as
    /// exact zeros.
    pub fn transmit<R: Rng>(&self, symbols: &[f64], active: usize, rng: &mut R) -> Vec<f64> {
        let std = self.equalized_noise_std();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = vec![0.0; symbols.len()];
        for (i, o) in out.iter_mut().enumerate().take(active) {
            *o = symbols[i] + std * normal.sample(rng);
        }
        out
    }

    /// Fresh equalized noise draws for a `[rows, active]` batch, as a flat
    /// `[rows, width]` buffer with zeros past `active`. Training-path helper.
    pub fn noise_block<R: Rng>(
        &self,
        rows: usize,
        width: usize,
        active: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        let std = self.equalized_noise_std();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            for i in 0..active {
                out[r * width + i] = std * normal.sample(rng);
            }
        }
        out
    }
}
