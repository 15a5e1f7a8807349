//! The joint source-channel-check coding chain: semantic encoder, adaptive
//! masking, power normalization, reparameterized check encoder, cooperative
//! joint decoder, quality estimator, and the bottleneck training loss.
//!
//! The check codeword is not a bare verifier: the decoder consumes it as an
//! input, so it carries reconstruction information as well as the material
//! the quality estimator needs.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// SNR values enter networks scaled by this constant (dB / 13).
pub const SNR_SCALE: f64 = 13.0;

/// Floor added to the softplus-mapped standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Initial bias of the raw sigma outputs. softplus(-2) ~= 0.13, so the check
/// codeword starts close to deterministic; training still moves sigma freely
/// through the reparameterized path.
pub const SIGMA_RAW_INIT: f64 = -2.0;

/// Default weight of the KL term in the bottleneck loss.
pub const DEFAULT_KL_WEIGHT: f64 = 1e-4;

/// Encoded semantic features, length `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeature {
    pub values: Vec<f64>,
}

impl SemanticFeature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Masked features: entries beyond `active_count` are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCodeword {
    pub values: Vec<f64>,
    pub active_count: usize,
    pub ratio: f64,
}

/// Reparameterized Gaussian check codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckCodeword {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sample: Vec<f64>,
}

impl CheckCodeword {
    pub fn len(&self) -> usize {
        self.mu.len()
    }
}

/// Estimated perceptual score, bounded to (0,1) by the estimator's terminal
/// sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityEstimate {
    pub value: f64,
}

/// Dimension wiring shared by every learned component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Semantic feature length `K`.
    pub feature_dim: usize,
    /// Check codeword length `k`.
    pub check_dim: usize,
    /// Hidden width of encoder/decoder bodies.
    pub hidden_main: usize,
    /// Hidden width of the check encoders.
    pub hidden_aux: usize,
    /// Hidden width of the quality estimator.
    pub hidden_est: usize,
}

impl CodecDims {
    pub fn pixel_count(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// The first-round codec: encoder, check encoder, joint decoder, estimator.
#[derive(Debug, Clone)]
pub struct CodecBundle {
    pub encoder: Mlp,
    pub check_encoder: Mlp,
    pub joint_decoder: Mlp,
    pub estimator: Mlp,
    pub dims: CodecDims,
}

impl CodecBundle {
    pub fn new<R: Rng>(dims: CodecDims, rng: &mut R) -> Result<Self> {
        let chw = dims.pixel_count();
        let (kk, k) = (dims.feature_dim, dims.check_dim);
        let (hm, ha) = (dims.hidden_main, dims.hidden_aux);
        let mut bundle = CodecBundle {
            // ratio and scaled SNR ride along as two appended scalars
            encoder: Mlp::new(
                "enc",
                &[chw + 2, hm, hm, kk],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            check_encoder: Mlp::new(
                "chk",
                &[kk + 2, ha, ha, 2 * k],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            joint_decoder: Mlp::new(
                "dec",
                &[kk + k + 1, hm, hm, chw],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            estimator: Mlp::new(
                "est",
                &[kk + k + 2, dims.hidden_est, dims.hidden_est, 1],
                Activation::Relu,
                Activation::Sigmoid,
                rng,
            )?,
            dims,
        };
        init_sigma_bias(&mut bundle.check_encoder, k);
        Ok(bundle)
    }

    /// Semantic encoding of one image under (ratio, SNR) conditioning.
    pub fn encode(&self, p: &Image, ratio: f64, snr_db: f64) -> Result<SemanticFeature> {
        if p.len() != self.dims.pixel_count() {
            return Err(Error::Dimension(format!(
                "encoder built for {} pixels, image has {}",
                self.dims.pixel_count(),
                p.len()
            )));
        }
        let mut input = Vec::with_capacity(p.len() + 2);
        input.extend_from_slice(p.pixels());
        input.push(ratio);
        input.push(snr_db / SNR_SCALE);
        Ok(SemanticFeature { values: self.encoder.run(&input)? })
    }

    /// Check encoding; the check encoder reads only the semantic features,
    /// never the image. Training samples `mu + sigma*eps`; evaluation uses
    /// `eps = 0` so the sample equals `mu`.
    pub fn check_encode<R: Rng>(
        &self,
        x: &SemanticFeature,
        ratio: f64,
        snr_db: f64,
        train_rng: Option<&mut R>,
    ) -> Result<CheckCodeword> {
        let mut input = Vec::with_capacity(x.len() + 2);
        input.extend_from_slice(&x.values);
        input.push(ratio);
        input.push(snr_db / SNR_SCALE);
        let raw = self.check_encoder.run(&input)?;
        let k = self.dims.check_dim;
        let mu = raw[..k].to_vec();
        let sigma: Vec<f64> = raw[k..].iter().map(|&v| softplus(v) + SIGMA_FLOOR).collect();
        let sample = match train_rng {
            Some(rng) => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                mu.iter()
                    .zip(&sigma)
                    .map(|(&m, &s)| m + s * normal.sample(rng))
                    .collect()
            }
            None => mu.clone(),
        };
        Ok(CheckCodeword { mu, sigma, sample })
    }

    /// Joint reconstruction from both received codewords; pixels clipped to
    /// `[0,1]`.
    pub fn joint_decode(&self, z_recv: &[f64], check_recv: &[f64], snr_db: f64) -> Result<Image> {
        if z_recv.len() != self.dims.feature_dim || check_recv.len() != self.dims.check_dim {
            return Err(Error::Dimension(format!(
                "decoder expects lengths ({}, {}), got ({}, {})",
                self.dims.feature_dim,
                self.dims.check_dim,
                z_recv.len(),
                check_recv.len()
            )));
        }
        let mut input = Vec::with_capacity(z_recv.len() + check_recv.len() + 1);
        input.extend_from_slice(z_recv);
        input.extend_from_slice(check_recv);
        input.push(snr_db / SNR_SCALE);
        let raw = self.joint_decoder.run(&input)?;
        let pixels = raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        Image::new(self.dims.channels, self.dims.height, self.dims.width, pixels)
    }

    /// Receiver-side perceptual quality estimate from the received codewords.
    pub fn estimate_quality(
        &self,
        z_recv: &[f64],
        check_recv: &[f64],
        snr_db: f64,
        ratio: f64,
    ) -> Result<QualityEstimate> {
        if z_recv.len() != self.dims.feature_dim || check_recv.len() != self.dims.check_dim {
            return Err(Error::Dimension(format!(
                "estimator expects lengths ({}, {}), got ({}, {})",
                self.dims.feature_dim,
                self.dims.check_dim,
                z_recv.len(),
                check_recv.len()
            )));
        }
        let mut input = Vec::with_capacity(z_recv.len() + check_recv.len() + 2);
        input.extend_from_slice(z_recv);
        input.extend_from_slice(check_recv);
        input.push(snr_db / SNR_SCALE);
        input.push(ratio);
        let out = self.estimator.run(&input)?;
        Ok(QualityEstimate { value: out[0] })
    }
}

/// Shift the raw-sigma half of a check encoder's output bias to
/// [`SIGMA_RAW_INIT`]. The last layer emits `[mu | raw sigma]`.
pub(crate) fn init_sigma_bias(check_encoder: &mut Mlp, k: usize) {
    let bias = &mut check_encoder.layers.last_mut().unwrap().bias;
    for v in &mut bias.data_mut()[k..2 * k] {
        *v = SIGMA_RAW_INIT;
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        (1.0 + v.exp()).ln()
    }
}

/// `K_mask = ceil(K * R)`. The product is nudged down by 1e-9 before rounding
/// up so binary representation error on decimal ratios cannot inflate the
/// count (e.g. 100 * 0.07 evaluating to 7.000000000000001).
pub fn mask_count(feature_dim: usize, ratio: f64) -> usize {
    ((feature_dim as f64 * ratio) - 1e-9).ceil().max(1.0) as usize
}

/// Keep the first `ceil(K*R)` features, zero the rest.
pub fn adaptive_mask(x: &SemanticFeature, ratio: f64) -> Result<MaskedCodeword> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("mask ratio must be in (0,1], got {ratio}")));
    }
    let active = mask_count(x.len(), ratio);
    let mut values = x.values.clone();
    for v in values.iter_mut().skip(active) {
        *v = 0.0;
    }
    Ok(MaskedCodeword { values, active_count: active, ratio })
}

/// Rescale so the mean square of the first `active` symbols is 1. Returns the
/// normalized vector and the scale that was divided out.
pub fn power_normalize(values: &[f64], active: usize) -> Result<(Vec<f64>, f64)> {
    assert!(active > 0 && active <= values.len());
    let ms: f64 = values[..active].iter().map(|v| v * v).sum::<f64>() / active as f64;
    if ms == 0.0 {
        return Err(Error::DegenerateCodeword(
            "cannot power-normalize an all-zero codeword".into(),
        ));
    }
    let scale = ms.sqrt();
    let mut out = vec![0.0; values.len()];
    for i in 0..active {
        out[i] = values[i] / scale;
    }
    Ok((out, scale))
}

/// Closed-form KL divergence of `N(mu, diag(sigma^2))` from `N(0, I)`:
/// `sum[(mu^2 + sigma^2 - 1)/2 - ln(sigma)]`.
pub fn kl_to_standard_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension("kl: mu and sigma lengths differ".into()));
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if s <= 0.0 {
            return Err(Error::Domain(format!("kl requires sigma > 0, got {s}")));
        }
        total += (m * m + s * s - 1.0) / 2.0 - s.ln();
    }
    Ok(total)
}

/// One sample's contribution to the bottleneck loss.
#[derive(Debug, Clone)]
pub struct IbSample<'a> {
    pub source: &'a Image,
    pub recon: &'a Image,
    pub score_gt: f64,
    pub score_est: f64,
    pub mu: &'a [f64],
    pub sigma: &'a [f64],
}

/// Bottleneck training loss over a batch:
/// mean estimator error + mean reconstruction MSE + `gamma` * mean KL.
pub fn ib_loss(batch: &[IbSample], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("ib_loss on an empty batch".into()));
    }
    let b = batch.len() as f64;
    let mut est_term = 0.0;
    let mut mse_term = 0.0;
    let mut kl_term = 0.0;
    for s in batch {
        if !s.source.same_dims(s.recon) {
            return Err(Error::Dimension("ib_loss: source/recon dims differ".into()));
        }
        est_term += (s.score_gt - s.score_est).powi(2);
        mse_term += s
            .source
            .pixels()
            .iter()
            .zip(s.recon.pixels())
            .map(|(&a, &r)| (a - r) * (a - r))
            .sum::<f64>()
            / s.source.len() as f64;
        kl_term += kl_to_standard_normal(s.mu, s.sigma)?;
    }
    Ok(est_term / b + mse_term / b + gamma * kl_term / b)
}

// ---- taped building blocks shared by the training stages ----

/// Multiply each row by the `[1,1,..,0,0]` mask keeping `active` entries.
pub fn taped_mask(tape: &mut Tape, x: Var, active: usize) -> Var {
    let k = tape.value(x).cols();
    let mut m = vec![0.0; k];
    m[..active].fill(1.0);
    let mv = tape.constant(Tensor::row(&m));
    tape.mul_row(x, mv)
}

/// Per-row power normalization over the first `active` columns. Assumes the
/// tail is already zero (i.e. the input went through [`taped_mask`]).
pub fn taped_power_normalize(tape: &mut Tape, z: Var, active: usize) -> Var {
    let sq = tape.square(z);
    let sums = tape.sum_cols(sq);
    let ms = tape.scale(sums, 1.0 / active as f64);
    let scale = tape.sqrt(ms);
    tape.div_col(z, scale)
}

/// Split a `[B, 2k]` raw check output into `(mu, sigma)` with the softplus
/// floor applied to sigma.
pub fn taped_check_split(tape: &mut Tape, raw: Var, k: usize) -> (Var, Var) {
    let mu = tape.slice_cols(raw, 0, k);
    let raw_sigma = tape.slice_cols(raw, k, 2 * k);
    let sp = tape.softplus(raw_sigma);
    let sigma = tape.add_const(sp, SIGMA_FLOOR);
    (mu, sigma)
}

/// Mean over the batch of the per-sample closed-form KL sums.
pub fn taped_kl_mean(tape: &mut Tape, mu: Var, sigma: Var) -> Var {
    let mu2 = tape.square(mu);
    let s2 = tape.square(sigma);
    let a = tape.add(mu2, s2);
    let b = tape.add_const(a, -1.0);
    let half = tape.scale(b, 0.5);
    let ls = tape.ln(sigma);
    let inner = tape.sub(half, ls);
    let per_sample = tape.sum_cols(inner);
    tape.mean_all(per_sample)
}

/// Constant `[rows, scalars.len()]` block with every row equal to `scalars`;
/// used to append (ratio, SNR) conditioning columns to a batch.
pub fn taped_repeat_scalars(tape: &mut Tape, rows: usize, scalars: &[f64]) -> Var {
    let mut data = Vec::with_capacity(rows * scalars.len());
    for _ in 0..rows {
        data.extend_from_slice(scalars);
    }
    tape.constant(Tensor::matrix(rows, scalars.len(), data).unwrap())
}
