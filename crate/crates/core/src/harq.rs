//! The transmission state machine: initial round, quality estimation,
//! retransmission decision, NAK-triggered recovery-refinement round, and
//! joint final decoding.
//!
//! At most one retransmission per sample. The transmitter retains the
//! semantic features and the receiver's estimate between rounds; the receiver
//! retains its post-equalization round-1 codewords for joint decoding.

use crate::agent::{self, ActorCritic, AgentState};
use crate::channel::{ChannelKind, ChannelRealization};
use crate::codec::{
    adaptive_mask, power_normalize, CodecBundle, CodecDims, SemanticFeature, SIGMA_FLOOR,
    SNR_SCALE,
};
use crate::data::{Image, PerceptualProjector};
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameRole};
use crate::nn::{Activation, Mlp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Retransmission-side networks, trainable only in stage 3.
#[derive(Debug, Clone)]
pub struct RetxBundle {
    /// Re-encodes retained features under the round-2 ratio: `enc2`.
    pub second_encoder: Mlp,
    /// Decorrelates round-2 features from round-1 features: `eo`.
    pub entropy_optimizer: Mlp,
    /// Check encoder of the retransmission phase, fed the round-1 quality
    /// estimate: `chk2`.
    pub second_check_encoder: Mlp,
    /// Joint decoder over all four received codewords: `dec2`.
    pub second_decoder: Mlp,
    pub dims: CodecDims,
}

impl RetxBundle {
    pub fn new<R: Rng>(dims: CodecDims, rng: &mut R) -> Result<Self> {
        let chw = dims.pixel_count();
        let (kk, k) = (dims.feature_dim, dims.check_dim);
        let (hm, ha) = (dims.hidden_main, dims.hidden_aux);
        let mut bundle = RetxBundle {
            second_encoder: Mlp::new(
                "enc2",
                &[kk + 2, hm, hm, kk],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            entropy_optimizer: Mlp::new(
                "eo",
                &[2 * kk, hm, hm, kk],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            second_check_encoder: Mlp::new(
                "chk2",
                &[2 * kk + 3, ha, ha, 2 * k],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            second_decoder: Mlp::new(
                "dec2",
                &[2 * kk + 2 * k + 1, hm, hm, chw],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            dims,
        };
        crate::codec::init_sigma_bias(&mut bundle.second_check_encoder, k);
        Ok(bundle)
    }

    pub fn second_encode(&self, x: &SemanticFeature, ratio2: f64, snr_db: f64) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(x.len() + 2);
        input.extend_from_slice(&x.values);
        input.push(ratio2);
        input.push(snr_db / SNR_SCALE);
        self.second_encoder.run(&input)
    }

    pub fn entropy_optimize(&self, x2: &[f64], x: &SemanticFeature) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(x2.len() + x.len());
        input.extend_from_slice(x2);
        input.extend_from_slice(&x.values);
        self.entropy_optimizer.run(&input)
    }

    /// Round-2 check encoding; the round-1 quality estimate feeds back into
    /// the codeword so re-encoding can react to how the first round went.
    pub fn second_check_encode(
        &self,
        x: &SemanticFeature,
        x_sec: &[f64],
        ratio2: f64,
        snr_db: f64,
        estimate: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut input = Vec::with_capacity(x.len() + x_sec.len() + 3);
        input.extend_from_slice(&x.values);
        input.extend_from_slice(x_sec);
        input.push(ratio2);
        input.push(snr_db / SNR_SCALE);
        input.push(estimate);
        let raw = self.second_check_encoder.run(&input)?;
        let k = self.dims.check_dim;
        let mu = raw[..k].to_vec();
        let sigma = raw[k..].iter().map(|&v| crate::codec::softplus(v) + SIGMA_FLOOR).collect();
        Ok((mu, sigma))
    }

    /// Joint reconstruction over both rounds' received codewords.
    pub fn second_decode(
        &self,
        z1_recv: &[f64],
        check1_recv: &[f64],
        z2_recv: &[f64],
        check2_recv: &[f64],
        snr_db: f64,
    ) -> Result<Image> {
        let (kk, k) = (self.dims.feature_dim, self.dims.check_dim);
        if z1_recv.len() != kk || z2_recv.len() != kk || check1_recv.len() != k || check2_recv.len() != k
        {
            return Err(Error::Dimension("second decoder input lengths do not match dims".into()));
        }
        let mut input = Vec::with_capacity(2 * kk + 2 * k + 1);
        input.extend_from_slice(z1_recv);
        input.extend_from_slice(check1_recv);
        input.extend_from_slice(z2_recv);
        input.extend_from_slice(check2_recv);
        input.push(snr_db / SNR_SCALE);
        let raw = self.second_decoder.run(&input)?;
        let pixels = raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        Image::new(self.dims.channels, self.dims.height, self.dims.width, pixels)
    }
}

/// Everything needed to run transmissions: trained codec, optional
/// retransmission bundle, the perceptual reference, and the channel model.
#[derive(Debug, Clone)]
pub struct LinkSystem {
    pub codec: CodecBundle,
    pub retx: Option<RetxBundle>,
    pub projector: PerceptualProjector,
    pub channel_kind: ChannelKind,
}

impl LinkSystem {
    /// Reconstruction with the channel (and wire) bypassed entirely; the
    /// noiseless reference for regression checks.
    pub fn channel_free_decode(&self, p: &Image, ratio: f64, snr_db: f64) -> Result<Image> {
        let x = self.codec.encode(p, ratio, snr_db)?;
        let masked = adaptive_mask(&x, ratio)?;
        let (z, _) = power_normalize(&masked.values, masked.active_count)?;
        let cw = self.codec.check_encode::<ChaCha8Rng>(&x, ratio, snr_db, None)?;
        let (c, _) = power_normalize(&cw.sample, cw.sample.len())?;
        self.codec.joint_decode(&z, &c, snr_db)
    }
}

/// Retransmission decision rule.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Accept every first transmission.
    Never,
    /// Request retransmission for every sample.
    Always,
    /// Retransmit when the estimate exceeds `theta * scale`.
    Threshold { theta: f64, scale: f64 },
    /// Retransmit when the true score exceeds the threshold
    /// (evaluation-only upper bound; uses ground truth).
    Oracle,
    /// Learned agent; greedy at evaluation, sampling during training.
    Agent { ac: &'a ActorCritic, greedy: bool },
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Never => "none",
            Policy::Always => "always",
            Policy::Threshold { .. } => "threshold",
            Policy::Oracle => "oracle",
            Policy::Agent { .. } => "agent",
        }
    }
}

/// Round-2 trace fields, present only when a retransmission happened.
#[derive(Debug, Clone)]
pub struct Round2Fields {
    pub k2_mask: usize,
    pub sent_jscc: Vec<f64>,
    pub recv_jscc: Vec<f64>,
    pub sent_check: Vec<f64>,
    pub recv_check: Vec<f64>,
    pub recon: Image,
    pub psnr: f64,
    pub score: f64,
    pub estimate: f64,
}

/// Full per-sample trace of one transmission.
#[derive(Debug, Clone)]
pub struct TransmissionRecord {
    pub sample_id: usize,
    pub snr_db: f64,
    pub ratio: f64,
    pub ratio2: f64,
    pub k_mask: usize,
    pub power_scale_jscc: f64,
    pub power_scale_check: f64,
    pub sent_jscc: Vec<f64>,
    pub recv_jscc: Vec<f64>,
    pub sent_check: Vec<f64>,
    pub recv_check: Vec<f64>,
    pub recon_r1: Image,
    pub psnr_r1: f64,
    pub score_r1: f64,
    pub estimate_r1: f64,
    pub action: u8,
    pub action_log_prob: Option<f64>,
    pub round2: Option<Round2Fields>,
    pub reward: f64,
    pub final_psnr: f64,
    pub final_score: f64,
    pub symbols_sent: usize,
}

impl TransmissionRecord {
    /// Structural invariants every emitted record must satisfy.
    pub fn validate(&self, check_dim: usize) -> Result<()> {
        if (self.action == 1) != self.round2.is_some() {
            return Err(Error::Protocol(format!(
                "record {}: round-2 fields present iff action = 1 violated (action {}, round2 {})",
                self.sample_id,
                self.action,
                self.round2.is_some()
            )));
        }
        let mut expect = self.k_mask + check_dim;
        if let Some(r2) = &self.round2 {
            expect += r2.k2_mask + check_dim;
        }
        if self.symbols_sent != expect {
            return Err(Error::Protocol(format!(
                "record {}: symbols_sent {} != expected {}",
                self.sample_id, self.symbols_sent, expect
            )));
        }
        Ok(())
    }
}

struct RetainedTx {
    x: SemanticFeature,
    estimate: f64,
    snr_db: f64,
}

struct RetainedRx {
    z_recv: Vec<f64>,
    check_recv: Vec<f64>,
}

/// One sample's HARQ exchange. Rounds must run in order; retransmitting
/// without a completed initial round is a protocol error.
pub struct HarqExchange<'a> {
    system: &'a LinkSystem,
    tx_state: Option<RetainedTx>,
    rx_state: Option<RetainedRx>,
}

/// What the initial round leaves behind for the caller.
pub struct Round1Outcome {
    pub k_mask: usize,
    pub power_scale_jscc: f64,
    pub power_scale_check: f64,
    pub sent_jscc: Vec<f64>,
    pub recv_jscc: Vec<f64>,
    pub sent_check: Vec<f64>,
    pub recv_check: Vec<f64>,
    pub recon: Image,
    pub psnr: f64,
    pub score: f64,
    pub estimate: f64,
}

impl<'a> HarqExchange<'a> {
    pub fn new(system: &'a LinkSystem) -> Self {
        HarqExchange { system, tx_state: None, rx_state: None }
    }

    /// Send one codeword through frame serialization and the channel,
    /// returning (sent symbols as they left the wire, received symbols).
    fn send<R: Rng>(
        &self,
        round: u8,
        role: FrameRole,
        active_symbols: &[f64],
        ratio: f64,
        snr_db: f64,
        pad_to: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let frame = Frame::from_symbols(round, role, ratio, snr_db, active_symbols)?;
        let wire = frame.serialize();
        let parsed = Frame::parse(&wire)?;
        let symbols = parsed.payload_f64();
        let ch = ChannelRealization::draw(self.system.channel_kind, snr_db, rng);
        let received = ch.transmit(&symbols, symbols.len(), rng);
        let mut sent = symbols;
        sent.resize(pad_to, 0.0);
        let mut recv = received;
        recv.resize(pad_to, 0.0);
        Ok((sent, recv))
    }

    pub fn initial_round<R: Rng>(
        &mut self,
        p: &Image,
        ratio: f64,
        snr_db: f64,
        rng: &mut R,
    ) -> Result<Round1Outcome> {
        let codec = &self.system.codec;
        let k = codec.dims.check_dim;
        let kk = codec.dims.feature_dim;

        let x = codec.encode(p, ratio, snr_db)?;
        let masked = adaptive_mask(&x, ratio)?;
        let (z_norm, scale_z) = power_normalize(&masked.values, masked.active_count)?;
        let (sent_jscc, recv_jscc) = self.send(
            1,
            FrameRole::Jscc,
            &z_norm[..masked.active_count],
            ratio,
            snr_db,
            kk,
            rng,
        )?;

        let cw = codec.check_encode::<ChaCha8Rng>(&x, ratio, snr_db, None)?;
        let (c_norm, scale_c) = power_normalize(&cw.sample, k)?;
        let (sent_check, recv_check) =
            self.send(1, FrameRole::Check, &c_norm, ratio, snr_db, k, rng)?;

        let recon = codec.joint_decode(&recv_jscc, &recv_check, snr_db)?;
        let estimate = codec.estimate_quality(&recv_jscc, &recv_check, snr_db, ratio)?.value;
        let psnr = crate::data::psnr(p, &recon)?;
        let score = self.system.projector.score(p, &recon)?;

        self.tx_state = Some(RetainedTx { x, estimate, snr_db });
        self.rx_state = Some(RetainedRx {
            z_recv: recv_jscc.clone(),
            check_recv: recv_check.clone(),
        });

        Ok(Round1Outcome {
            k_mask: masked.active_count,
            power_scale_jscc: scale_z,
            power_scale_check: scale_c,
            sent_jscc,
            recv_jscc,
            sent_check,
            recv_check,
            recon,
            psnr,
            score,
            estimate,
        })
    }

    /// NAK-triggered recovery-refinement round. Fresh fading and noise draws
    /// at the same SNR; the second decoder combines all four codewords.
    pub fn retransmission_round<R: Rng>(
        &mut self,
        p: &Image,
        ratio2: f64,
        rng: &mut R,
    ) -> Result<Round2Fields> {
        let tx = self.tx_state.as_ref().ok_or_else(|| {
            Error::Protocol("retransmission requested before the initial round".into())
        })?;
        let rx = self.rx_state.as_ref().ok_or_else(|| {
            Error::Protocol("receiver has no retained round-1 codewords".into())
        })?;
        let retx = self.system.retx.as_ref().ok_or_else(|| {
            Error::Protocol("retransmission requested but no retransmission bundle loaded".into())
        })?;
        let codec = &self.system.codec;
        let (kk, k) = (codec.dims.feature_dim, codec.dims.check_dim);
        let snr_db = tx.snr_db;

        let x2 = retx.second_encode(&tx.x, ratio2, snr_db)?;
        let x_sec = retx.entropy_optimize(&x2, &tx.x)?;
        let masked = adaptive_mask(&SemanticFeature { values: x_sec.clone() }, ratio2)?;
        let (z_norm, _) = power_normalize(&masked.values, masked.active_count)?;
        let (sent_jscc, recv_jscc) = self.send(
            2,
            FrameRole::Jscc,
            &z_norm[..masked.active_count],
            ratio2,
            snr_db,
            kk,
            rng,
        )?;

        let (mu2, _sigma2) =
            retx.second_check_encode(&tx.x, &x_sec, ratio2, snr_db, tx.estimate)?;
        let (c_norm, _) = power_normalize(&mu2, k)?;
        let (sent_check, recv_check) =
            self.send(2, FrameRole::Check, &c_norm, ratio2, snr_db, k, rng)?;

        let recon = retx.second_decode(
            &rx.z_recv,
            &rx.check_recv,
            &recv_jscc,
            &recv_check,
            snr_db,
        )?;
        let estimate = codec
            .estimate_quality(&recv_jscc, &recv_check, snr_db, ratio2)?
            .value;
        let psnr = crate::data::psnr(p, &recon)?;
        let score = self.system.projector.score(p, &recon)?;

        Ok(Round2Fields {
            k2_mask: masked.active_count,
            sent_jscc,
            recv_jscc,
            sent_check,
            recv_check,
            recon,
            psnr,
            score,
            estimate,
        })
    }
}

/// Run the full state machine for one sample: initial round, policy decision,
/// optional retransmission, reward, and final accounting. The same SNR
/// governs both rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_transmission<R: Rng>(
    system: &LinkSystem,
    sample_id: usize,
    p: &Image,
    snr_db: f64,
    ratio: f64,
    ratio2: f64,
    policy: &Policy,
    threshold: f64,
    rng: &mut R,
) -> Result<TransmissionRecord> {
    let mut exchange = HarqExchange::new(system);
    let r1 = exchange.initial_round(p, ratio, snr_db, rng)?;

    let mut action_log_prob = None;
    let action: u8 = match policy {
        Policy::Never => 0,
        Policy::Always => 1,
        Policy::Threshold { theta, scale } => u8::from(r1.estimate > theta * scale),
        Policy::Oracle => u8::from(r1.score > threshold),
        Policy::Agent { ac, greedy } => {
            let state = AgentState {
                snr_db,
                ratio,
                threshold,
                estimate: r1.estimate,
                deviation: r1.estimate - threshold,
                check_codeword: r1.recv_check.clone(),
            };
            let mode = if *greedy { agent::ActMode::Greedy } else { agent::ActMode::Sample };
            let decision = agent::act(ac, &state, mode, rng)?;
            action_log_prob = Some(decision.log_prob);
            decision.action
        }
    };

    let round2 = if action == 1 {
        Some(exchange.retransmission_round(p, ratio2, rng)?)
    } else {
        None
    };

    let reward = agent::reward(
        r1.score,
        round2.as_ref().map(|r| r.score),
        action,
        threshold,
    )?;

    let (final_psnr, final_score) = match &round2 {
        Some(r2) => (r2.psnr, r2.score),
        None => (r1.psnr, r1.score),
    };
    let k = system.codec.dims.check_dim;
    let symbols_sent = r1.k_mask + k + round2.as_ref().map_or(0, |r2| r2.k2_mask + k);

    let record = TransmissionRecord {
        sample_id,
        snr_db,
        ratio,
        ratio2,
        k_mask: r1.k_mask,
        power_scale_jscc: r1.power_scale_jscc,
        power_scale_check: r1.power_scale_check,
        sent_jscc: r1.sent_jscc,
        recv_jscc: r1.recv_jscc,
        sent_check: r1.sent_check,
        recv_check: r1.recv_check,
        recon_r1: r1.recon,
        psnr_r1: r1.psnr,
        score_r1: r1.score,
        estimate_r1: r1.estimate,
        action,
        action_log_prob,
        round2,
        reward,
        final_psnr,
        final_score,
        symbols_sent,
    };
    record.validate(k)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_image;
    use crate::rng::{purpose, stream_rng};

    fn test_dims() -> CodecDims {
        CodecDims {
            channels: 1,
            height: 4,
            width: 4,
            feature_dim: 8,
            check_dim: 3,
            hidden_main: 16,
            hidden_aux: 12,
            hidden_est: 12,
        }
    }

    fn test_system(seed: u64, kind: ChannelKind) -> LinkSystem {
        let mut rng = stream_rng(seed, purpose::MODEL_INIT, 0);
        let dims = test_dims();
        LinkSystem {
            codec: CodecBundle::new(dims, &mut rng).unwrap(),
            retx: Some(RetxBundle::new(dims, &mut rng).unwrap()),
            projector: PerceptualProjector::new(seed, 32, 1, 4, 4),
            channel_kind: kind,
        }
    }

    #[test]
    fn noiseless_limit_matches_channel_free_pass() {
        let system = test_system(1, ChannelKind::Awgn);
        let p = generate_image(1, 0, 1, 4, 4);
        let mut rng = stream_rng(1, purpose::CHANNEL, 0);
        let mut exchange = HarqExchange::new(&system);
        let r1 = exchange.initial_round(&p, 0.5, 99.0, &mut rng).unwrap();
        let reference = system.channel_free_decode(&p, 0.5, 99.0).unwrap();
        let ref_psnr = crate::data::psnr(&p, &reference).unwrap();
        assert!(
            (r1.psnr - ref_psnr).abs() < 0.1,
            "noisy {} vs channel-free {}",
            r1.psnr,
            ref_psnr
        );
    }

    #[test]
    fn run_is_deterministic_per_seed() {
        let system = test_system(2, ChannelKind::Rayleigh);
        let p = generate_image(2, 0, 1, 4, 4);
        let run = || {
            let mut rng = stream_rng(2, purpose::CHANNEL, 9);
            run_transmission(&system, 0, &p, 4.0, 0.5, 0.5, &Policy::Always, 0.3, &mut rng)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.recv_jscc, b.recv_jscc);
        assert_eq!(a.final_psnr, b.final_psnr);
        assert_eq!(
            a.round2.as_ref().unwrap().recv_check,
            b.round2.as_ref().unwrap().recv_check
        );
    }

    #[test]
    fn never_policy_accounting() {
        let system = test_system(3, ChannelKind::Awgn);
        let p = generate_image(3, 0, 1, 4, 4);
        let mut rng = stream_rng(3, purpose::CHANNEL, 0);
        let rec =
            run_transmission(&system, 7, &p, 4.0, 0.5, 0.5, &Policy::Never, 0.3, &mut rng)
                .unwrap();
        assert_eq!(rec.action, 0);
        assert!(rec.round2.is_none());
        // K_mask = ceil(8*0.5) = 4, check k = 3
        assert_eq!(rec.symbols_sent, 4 + 3);
        assert_eq!(rec.final_psnr, rec.psnr_r1);
    }

    #[test]
    fn always_policy_accounting() {
        let system = test_system(4, ChannelKind::Awgn);
        let p = generate_image(4, 0, 1, 4, 4);
        let mut rng = stream_rng(4, purpose::CHANNEL, 0);
        let rec =
            run_transmission(&system, 7, &p, 4.0, 0.5, 0.25, &Policy::Always, 0.3, &mut rng)
                .unwrap();
        assert_eq!(rec.action, 1);
        // round 1: 4 + 3; round 2: ceil(8*0.25)=2 + 3
        assert_eq!(rec.symbols_sent, 4 + 3 + 2 + 3);
        let r2 = rec.round2.as_ref().unwrap();
        assert_eq!(r2.k2_mask, 2);
        assert_eq!(rec.final_psnr, r2.psnr);
    }

    #[test]
    fn unreachable_threshold_never_retransmits() {
        let system = test_system(5, ChannelKind::Awgn);
        let policy = Policy::Threshold { theta: 1.0, scale: 1.0 };
        for i in 0..8 {
            let p = generate_image(5, i, 1, 4, 4);
            let mut rng = stream_rng(5, purpose::CHANNEL, i);
            let rec = run_transmission(&system, i as usize, &p, 4.0, 0.5, 0.5, &policy, 0.3, &mut rng)
                .unwrap();
            // estimates live in (0,1), so they can never exceed 1.0
            assert_eq!(rec.action, 0);
        }
    }

    #[test]
    fn retransmission_before_initial_round_is_protocol_error() {
        let system = test_system(6, ChannelKind::Awgn);
        let p = generate_image(6, 0, 1, 4, 4);
        let mut rng = stream_rng(6, purpose::CHANNEL, 0);
        let mut exchange = HarqExchange::new(&system);
        let err = exchange.retransmission_round(&p, 0.5, &mut rng);
        assert!(matches!(err, Err(Error::Protocol(_))));
    }

    #[test]
    fn estimate_feedback_changes_second_check_codeword() {
        let system = test_system(7, ChannelKind::Awgn);
        let retx = system.retx.as_ref().unwrap();
        let x = SemanticFeature { values: vec![0.4, -0.2, 0.9, 0.1, 0.0, -0.5, 0.3, 0.7] };
        let x_sec = vec![0.1; 8];
        let (mu_low, _) = retx.second_check_encode(&x, &x_sec, 0.5, 4.0, 0.1).unwrap();
        let (mu_high, _) = retx.second_check_encode(&x, &x_sec, 0.5, 4.0, 0.9).unwrap();
        assert_ne!(mu_low, mu_high, "estimate input has no effect on x_com2");
    }

    #[test]
    fn record_invariants_reject_inconsistency() {
        let system = test_system(8, ChannelKind::Awgn);
        let p = generate_image(8, 0, 1, 4, 4);
        let mut rng = stream_rng(8, purpose::CHANNEL, 0);
        let mut rec =
            run_transmission(&system, 0, &p, 4.0, 0.5, 0.5, &Policy::Never, 0.3, &mut rng)
                .unwrap();
        rec.validate(3).unwrap();
        rec.symbols_sent += 1;
        assert!(rec.validate(3).is_err());
        rec.symbols_sent -= 1;
        rec.action = 1; // round2 missing
        assert!(rec.validate(3).is_err());
    }

    #[test]
    fn oracle_policy_uses_ground_truth() {
        let system = test_system(9, ChannelKind::Awgn);
        let p = generate_image(9, 0, 1, 4, 4);
        // threshold of 0 forces retransmission (any positive score exceeds it);
        // threshold of 1 forbids it
        let mut rng = stream_rng(9, purpose::CHANNEL, 0);
        let rec = run_transmission(&system, 0, &p, 4.0, 0.5, 0.5, &Policy::Oracle, 0.0, &mut rng)
            .unwrap();
        assert_eq!(rec.action, 1);
        let mut rng = stream_rng(9, purpose::CHANNEL, 0);
        let rec = run_transmission(&system, 0, &p, 4.0, 0.5, 0.5, &Policy::Oracle, 1.0, &mut rng)
            .unwrap();
        assert_eq!(rec.action, 0);
    }

    #[test]
    fn round1_is_policy_independent() {
        let system = test_system(10, ChannelKind::Rayleigh);
        let p = generate_image(10, 0, 1, 4, 4);
        let mut outcomes = Vec::new();
        for policy in [Policy::Never, Policy::Always, Policy::Oracle] {
            let mut rng = stream_rng(10, purpose::CHANNEL, 3);
            let rec = run_transmission(&system, 0, &p, 1.0, 0.5, 0.5, &policy, 0.3, &mut rng)
                .unwrap();
            outcomes.push((rec.recv_jscc.clone(), rec.psnr_r1, rec.estimate_r1));
        }
        assert_eq!(outcomes[0], outcomes[1]);
        assert_eq!(outcomes[0], outcomes[2]);
    }
}
