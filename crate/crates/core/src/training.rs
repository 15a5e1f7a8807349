//! Multi-stage training: (1) backbone end-to-end with the check path
//! disabled, (2) check encoder + joint decoder + estimator under the
//! bottleneck loss with a frozen encoder, (3) retransmission modules against
//! the frozen base system, (4) the PPO retransmission agent.
//!
//! Freeze contracts are enforced by checksum: a frozen component's parameters
//! are byte-identical before and after its stage. Every stage derives its RNG
//! streams from (seed, stage id), so re-running a stage from the same input
//! checkpoint reproduces identical parameters.

use crate::agent::{self, ActorCritic, AgentState, PpoConfig, RolloutBuffer};
use crate::channel::{ChannelKind, ChannelRealization};
use crate::checkpoint::{mlp_checksum, Checkpoint};
use crate::codec::{
    mask_count, taped_check_split, taped_kl_mean, taped_mask, taped_power_normalize,
    taped_repeat_scalars, CodecBundle, SNR_SCALE,
};
use crate::config::RunConfig;
use crate::data::{DatasetSplit, Image, PerceptualProjector};
use crate::error::{Error, Result};
use crate::eval::percentile_upper;
use crate::harq::{run_transmission, LinkSystem, Policy, RetxBundle};
use crate::nn::AdamState;
use crate::rng::{purpose, stream_rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Losses (or rewards) per epoch, returned by each stage for metric CSVs.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub epoch_values: Vec<f64>,
}

/// Per-epoch agent training curve row.
#[derive(Debug, Clone, Copy)]
pub struct AgentCurvePoint {
    pub epoch: usize,
    pub mean_reward: f64,
    pub retx_ratio: f64,
    pub outage: f64,
}

/// Stage-4 output: the trained policy, its curve, the threshold it was
/// trained against, and the random-policy reward baseline.
pub struct AgentTrainingOutcome {
    pub actor_critic: ActorCritic,
    pub curve: Vec<AgentCurvePoint>,
    pub threshold: f64,
    pub random_policy_mean_reward: f64,
}

pub fn sample_snr<R: Rng>(grid: &[f64], rng: &mut R) -> f64 {
    grid[rng.random_range(0..grid.len())]
}

fn batch_tensor(images: &[Image], idx: &[usize]) -> Tensor {
    let chw = images[0].len();
    let mut data = Vec::with_capacity(idx.len() * chw);
    for &i in idx {
        data.extend_from_slice(images[i].pixels());
    }
    Tensor::matrix(idx.len(), chw, data).unwrap()
}

/// Equalized per-sample channel noise for a `[rows, width]` batch; one fading
/// draw per row (block fading per codeword), zeros beyond `active`.
fn channel_noise<R: Rng>(
    kind: ChannelKind,
    snr_db: f64,
    rows: usize,
    width: usize,
    active: usize,
    rng: &mut R,
) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = vec![0.0; rows * width];
    for r in 0..rows {
        let ch = ChannelRealization::draw(kind, snr_db, rng);
        let std = ch.equalized_noise_std();
        for i in 0..active {
            data[r * width + i] = std * normal.sample(rng);
        }
    }
    Tensor::matrix(rows, width, data).unwrap()
}

/// Standard-normal draws for the reparameterized check codeword.
fn reparam_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Ground-truth perceptual scores of a batch of raw reconstructions
/// (clipped to pixel range first), as a detached `[B,1]` target.
fn batch_scores(
    projector: &PerceptualProjector,
    images: &[Image],
    idx: &[usize],
    recon_raw: &Tensor,
) -> Result<Vec<f64>> {
    let chw = images[0].len();
    let (c, h, w) = (images[idx[0]].channels, images[idx[0]].height, images[idx[0]].width);
    let mut scores = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let pixels: Vec<f64> = recon_raw.data()[row * chw..(row + 1) * chw]
            .iter()
            .map(|&v| v.clamp(0.0, 1.0))
            .collect();
        let recon = Image::new(c, h, w, pixels)?;
        scores.push(projector.score(&images[i], &recon)?);
    }
    Ok(scores)
}

fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn check_finite(loss: f64, stage: usize, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "stage {stage} diverged: loss {loss} at epoch {epoch}, step {step}"
        )));
    }
    Ok(())
}

/// The taped round-1 encode/mask/normalize/transmit chain shared by the
/// training stages. Returns (features, received masked codeword).
struct TapedRound1 {
    x: Var,
    z_recv: Var,
}

#[allow(clippy::too_many_arguments)]
fn taped_round1<R: Rng>(
    tape: &mut Tape,
    enc: &crate::nn::BoundMlp,
    imgs: Var,
    batch: usize,
    feature_dim: usize,
    ratio: f64,
    snr_db: f64,
    kind: ChannelKind,
    rng: &mut R,
) -> TapedRound1 {
    let k_mask = mask_count(feature_dim, ratio);
    let cond = taped_repeat_scalars(tape, batch, &[ratio, snr_db / SNR_SCALE]);
    let enc_in = tape.concat_cols(&[imgs, cond]);
    let x = enc.forward(tape, enc_in);
    let masked = taped_mask(tape, x, k_mask);
    let z = taped_power_normalize(tape, masked, k_mask);
    let noise = channel_noise(kind, snr_db, batch, feature_dim, k_mask, rng);
    let noise_v = tape.constant(noise);
    let z_recv = tape.add(z, noise_v);
    TapedRound1 { x, z_recv }
}

/// Stage 1: encoder and decoder end to end on MSE, check slot zeroed. SNR and
/// ratio are sampled fresh per batch.
pub fn stage1_train_backbone(
    cfg: &RunConfig,
    data: &DatasetSplit,
    bundle: &mut CodecBundle,
) -> Result<StageReport> {
    let dims = bundle.dims;
    let batch = cfg.train.batch;
    let kind = cfg.channel.kind;
    let mut sample_rng = stream_rng(cfg.data.seed, purpose::TRAIN_SAMPLING, 1);
    let mut channel_rng = stream_rng(cfg.data.seed, purpose::CHANNEL, 1);
    let mut adam = AdamState::new(cfg.train.lr);
    let mut report = StageReport::default();

    for epoch in 0..cfg.train.stage1_epochs {
        let order = shuffled_indices(data.images.len(), &mut sample_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let snr_db = sample_snr(&cfg.channel.snr_db_grid, &mut sample_rng);
            let ratio =
                sample_rng.random_range(cfg.train.ratio_min..=cfg.train.ratio_max);
            let b = chunk.len();

            let mut tape = Tape::new();
            let bound_enc = bundle.encoder.bind(&mut tape);
            let bound_dec = bundle.joint_decoder.bind(&mut tape);
            let imgs = tape.constant(batch_tensor(&data.images, chunk));
            let r1 = taped_round1(
                &mut tape,
                &bound_enc,
                imgs,
                b,
                dims.feature_dim,
                ratio,
                snr_db,
                kind,
                &mut channel_rng,
            );
            let check_zeros = tape.constant(Tensor::zeros(vec![b, dims.check_dim]));
            let snr_col = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE]);
            let dec_in = tape.concat_cols(&[r1.z_recv, check_zeros, snr_col]);
            let recon = bound_dec.forward(&mut tape, dec_in);
            let loss = tape.mse(recon, imgs);

            let loss_value = tape.value(loss).data()[0];
            check_finite(loss_value, 1, epoch, step)?;
            epoch_loss += loss_value;
            steps += 1;

            let grads = tape.backward(loss)?;
            bound_enc.write_grads(&grads, &mut bundle.encoder);
            bound_dec.write_grads(&grads, &mut bundle.joint_decoder);
            let mut params = Vec::new();
            let mut names = Vec::new();
            names.extend(bundle.encoder.param_names());
            names.extend(bundle.joint_decoder.param_names());
            params.extend(bundle.encoder.params_mut());
            params.extend(bundle.joint_decoder.params_mut());
            adam.step(&mut params, &names)?;
        }
        report.epoch_values.push(epoch_loss / steps.max(1) as f64);
    }
    Ok(report)
}

/// Stage 2: check encoder, joint decoder and estimator trained jointly under
/// the bottleneck loss; the encoder is frozen (checksum-verified).
pub fn stage2_train_check(
    cfg: &RunConfig,
    data: &DatasetSplit,
    projector: &PerceptualProjector,
    bundle: &mut CodecBundle,
) -> Result<StageReport> {
    let dims = bundle.dims;
    let batch = cfg.train.batch;
    let kind = cfg.channel.kind;
    let k = dims.check_dim;
    let enc_before = mlp_checksum(&bundle.encoder);
    let mut sample_rng = stream_rng(cfg.data.seed, purpose::TRAIN_SAMPLING, 2);
    let mut channel_rng = stream_rng(cfg.data.seed, purpose::CHANNEL, 2);
    let mut reparam_rng = stream_rng(cfg.data.seed, purpose::REPARAM, 2);
    let mut adam = AdamState::new(cfg.train.lr);
    let mut report = StageReport::default();

    for epoch in 0..cfg.train.stage2_epochs {
        let order = shuffled_indices(data.images.len(), &mut sample_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let snr_db = sample_snr(&cfg.channel.snr_db_grid, &mut sample_rng);
            let ratio =
                sample_rng.random_range(cfg.train.ratio_min..=cfg.train.ratio_max);
            let b = chunk.len();

            let mut tape = Tape::new();
            let bound_enc = bundle.encoder.bind_frozen(&mut tape);
            let bound_chk = bundle.check_encoder.bind(&mut tape);
            let bound_dec = bundle.joint_decoder.bind(&mut tape);
            let bound_est = bundle.estimator.bind(&mut tape);

            let imgs = tape.constant(batch_tensor(&data.images, chunk));
            let r1 = taped_round1(
                &mut tape,
                &bound_enc,
                imgs,
                b,
                dims.feature_dim,
                ratio,
                snr_db,
                kind,
                &mut channel_rng,
            );

            // check path: reparameterized sample, normalized, transmitted
            let cond = taped_repeat_scalars(&mut tape, b, &[ratio, snr_db / SNR_SCALE]);
            let chk_in = tape.concat_cols(&[r1.x, cond]);
            let raw = bound_chk.forward(&mut tape, chk_in);
            let (mu, sigma) = taped_check_split(&mut tape, raw, k);
            let eps = tape.constant(reparam_noise(b, k, &mut reparam_rng));
            let noise_part = tape.mul(sigma, eps);
            let sample = tape.add(mu, noise_part);
            let c_norm = taped_power_normalize(&mut tape, sample, k);
            let c_noise = tape.constant(channel_noise(kind, snr_db, b, k, k, &mut channel_rng));
            let c_recv = tape.add(c_norm, c_noise);

            let snr_col = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE]);
            let dec_in = tape.concat_cols(&[r1.z_recv, c_recv, snr_col]);
            let recon = bound_dec.forward(&mut tape, dec_in);

            let est_cond = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE, ratio]);
            let est_in = tape.concat_cols(&[r1.z_recv, c_recv, est_cond]);
            let est = bound_est.forward(&mut tape, est_in);

            // detached targets: the perceptual score is a decision signal,
            // not an optimization target
            let scores = batch_scores(projector, &data.images, chunk, tape.value(recon))?;
            let gt = tape.constant(Tensor::matrix(b, 1, scores).unwrap());

            let est_loss = tape.mse(est, gt);
            let img_loss = tape.mse(recon, imgs);
            let kl = taped_kl_mean(&mut tape, mu, sigma);
            let kl_scaled = tape.scale(kl, cfg.train.kl_weight);
            let partial = tape.add(est_loss, img_loss);
            let loss = tape.add(partial, kl_scaled);

            let loss_value = tape.value(loss).data()[0];
            check_finite(loss_value, 2, epoch, step)?;
            epoch_loss += loss_value;
            steps += 1;

            let grads = tape.backward(loss)?;
            bound_chk.write_grads(&grads, &mut bundle.check_encoder);
            bound_dec.write_grads(&grads, &mut bundle.joint_decoder);
            bound_est.write_grads(&grads, &mut bundle.estimator);
            let mut params = Vec::new();
            let mut names = Vec::new();
            names.extend(bundle.check_encoder.param_names());
            names.extend(bundle.joint_decoder.param_names());
            names.extend(bundle.estimator.param_names());
            params.extend(bundle.check_encoder.params_mut());
            params.extend(bundle.joint_decoder.params_mut());
            params.extend(bundle.estimator.params_mut());
            adam.step(&mut params, &names)?;
        }
        report.epoch_values.push(epoch_loss / steps.max(1) as f64);
    }

    if mlp_checksum(&bundle.encoder) != enc_before {
        return Err(Error::Training("freeze contract violated: encoder changed in stage 2".into()));
    }
    Ok(report)
}

/// Stage 3: second encoder, entropy optimizer, second check encoder and
/// second decoder, with the whole base system frozen. Every training sample
/// is forced through retransmission so the modules see the full distortion
/// distribution.
pub fn stage3_train_retx(
    cfg: &RunConfig,
    data: &DatasetSplit,
    projector: &PerceptualProjector,
    bundle: &CodecBundle,
    retx: &mut RetxBundle,
) -> Result<StageReport> {
    let dims = bundle.dims;
    let batch = cfg.train.batch;
    let kind = cfg.channel.kind;
    let k = dims.check_dim;
    let base_before: Vec<u64> = [
        &bundle.encoder,
        &bundle.check_encoder,
        &bundle.joint_decoder,
        &bundle.estimator,
    ]
    .iter()
    .map(|m| mlp_checksum(m))
    .collect();

    let mut sample_rng = stream_rng(cfg.data.seed, purpose::TRAIN_SAMPLING, 3);
    let mut channel_rng = stream_rng(cfg.data.seed, purpose::CHANNEL, 3);
    let mut reparam_rng = stream_rng(cfg.data.seed, purpose::REPARAM, 3);
    let mut adam = AdamState::new(cfg.train.lr);
    let mut report = StageReport::default();

    for epoch in 0..cfg.train.stage3_epochs {
        let order = shuffled_indices(data.images.len(), &mut sample_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let snr_db = sample_snr(&cfg.channel.snr_db_grid, &mut sample_rng);
            let ratio =
                sample_rng.random_range(cfg.train.ratio_min..=cfg.train.ratio_max);
            // round 2 re-uses the round-1 ratio by default
            let ratio2 = ratio;
            let b = chunk.len();
            let k2_mask = mask_count(dims.feature_dim, ratio2);

            let mut tape = Tape::new();
            let bound_enc = bundle.encoder.bind_frozen(&mut tape);
            let bound_chk = bundle.check_encoder.bind_frozen(&mut tape);
            let bound_est = bundle.estimator.bind_frozen(&mut tape);
            let bound_enc2 = retx.second_encoder.bind(&mut tape);
            let bound_eo = retx.entropy_optimizer.bind(&mut tape);
            let bound_chk2 = retx.second_check_encoder.bind(&mut tape);
            let bound_dec2 = retx.second_decoder.bind(&mut tape);

            let imgs = tape.constant(batch_tensor(&data.images, chunk));
            let r1 = taped_round1(
                &mut tape,
                &bound_enc,
                imgs,
                b,
                dims.feature_dim,
                ratio,
                snr_db,
                kind,
                &mut channel_rng,
            );

            // frozen round-1 check path in deployment mode (sample = mu)
            let cond = taped_repeat_scalars(&mut tape, b, &[ratio, snr_db / SNR_SCALE]);
            let chk_in = tape.concat_cols(&[r1.x, cond]);
            let raw1 = bound_chk.forward(&mut tape, chk_in);
            let (mu1, _sigma1) = taped_check_split(&mut tape, raw1, k);
            let c1_norm = taped_power_normalize(&mut tape, mu1, k);
            let c1_noise =
                tape.constant(channel_noise(kind, snr_db, b, k, k, &mut channel_rng));
            let c1_recv = tape.add(c1_norm, c1_noise);

            // frozen round-1 estimate, fed back into the round-2 check encoder
            let est_cond = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE, ratio]);
            let est_in = tape.concat_cols(&[r1.z_recv, c1_recv, est_cond]);
            let est1 = bound_est.forward(&mut tape, est_in);

            // retransmission encoding
            let cond2 = taped_repeat_scalars(&mut tape, b, &[ratio2, snr_db / SNR_SCALE]);
            let enc2_in = tape.concat_cols(&[r1.x, cond2]);
            let x2 = bound_enc2.forward(&mut tape, enc2_in);
            let eo_in = tape.concat_cols(&[x2, r1.x]);
            let x_sec = bound_eo.forward(&mut tape, eo_in);
            let masked2 = taped_mask(&mut tape, x_sec, k2_mask);
            let z2 = taped_power_normalize(&mut tape, masked2, k2_mask);
            let z2_noise = tape.constant(channel_noise(
                kind,
                snr_db,
                b,
                dims.feature_dim,
                k2_mask,
                &mut channel_rng,
            ));
            let z2_recv = tape.add(z2, z2_noise);

            let chk2_in = tape.concat_cols(&[r1.x, x_sec, cond2, est1]);
            let raw2 = bound_chk2.forward(&mut tape, chk2_in);
            let (mu2, sigma2) = taped_check_split(&mut tape, raw2, k);
            let eps2 = tape.constant(reparam_noise(b, k, &mut reparam_rng));
            let noise_part2 = tape.mul(sigma2, eps2);
            let sample2 = tape.add(mu2, noise_part2);
            let c2_norm = taped_power_normalize(&mut tape, sample2, k);
            let c2_noise =
                tape.constant(channel_noise(kind, snr_db, b, k, k, &mut channel_rng));
            let c2_recv = tape.add(c2_norm, c2_noise);

            // joint decode over both rounds
            let snr_col = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE]);
            let dec2_in =
                tape.concat_cols(&[r1.z_recv, c1_recv, z2_recv, c2_recv, snr_col]);
            let recon2 = bound_dec2.forward(&mut tape, dec2_in);

            // round-2 estimate through the frozen estimator; its gradient
            // shapes the retransmission codewords
            let est2_cond = taped_repeat_scalars(&mut tape, b, &[snr_db / SNR_SCALE, ratio2]);
            let est2_in = tape.concat_cols(&[z2_recv, c2_recv, est2_cond]);
            let est2 = bound_est.forward(&mut tape, est2_in);

            let scores2 = batch_scores(projector, &data.images, chunk, tape.value(recon2))?;
            let gt2 = tape.constant(Tensor::matrix(b, 1, scores2).unwrap());

            let img_loss = tape.mse(recon2, imgs);
            let est_loss = tape.mse(est2, gt2);
            let kl = taped_kl_mean(&mut tape, mu2, sigma2);
            let kl_scaled = tape.scale(kl, cfg.train.kl_weight);
            let partial = tape.add(img_loss, est_loss);
            let loss = tape.add(partial, kl_scaled);

            let loss_value = tape.value(loss).data()[0];
            check_finite(loss_value, 3, epoch, step)?;
            epoch_loss += loss_value;
            steps += 1;

            let grads = tape.backward(loss)?;
            bound_enc2.write_grads(&grads, &mut retx.second_encoder);
            bound_eo.write_grads(&grads, &mut retx.entropy_optimizer);
            bound_chk2.write_grads(&grads, &mut retx.second_check_encoder);
            bound_dec2.write_grads(&grads, &mut retx.second_decoder);
            let mut params = Vec::new();
            let mut names = Vec::new();
            names.extend(retx.second_encoder.param_names());
            names.extend(retx.entropy_optimizer.param_names());
            names.extend(retx.second_check_encoder.param_names());
            names.extend(retx.second_decoder.param_names());
            params.extend(retx.second_encoder.params_mut());
            params.extend(retx.entropy_optimizer.params_mut());
            params.extend(retx.second_check_encoder.params_mut());
            params.extend(retx.second_decoder.params_mut());
            adam.step(&mut params, &names)?;
        }
        report.epoch_values.push(epoch_loss / steps.max(1) as f64);
    }

    let base_after: Vec<u64> = [
        &bundle.encoder,
        &bundle.check_encoder,
        &bundle.joint_decoder,
        &bundle.estimator,
    ]
    .iter()
    .map(|m| mlp_checksum(m))
    .collect();
    if base_before != base_after {
        return Err(Error::Training("freeze contract violated: base system changed in stage 3".into()));
    }
    Ok(report)
}

/// Threshold used for retransmission decisions: the configured percentile of
/// never-retransmit ground-truth scores on the agent split, SNR cycled over
/// the grid.
pub fn compute_threshold(
    cfg: &RunConfig,
    system: &LinkSystem,
    agent_split: &DatasetSplit,
) -> Result<f64> {
    let grid = &cfg.channel.snr_db_grid;
    let mut scores = Vec::with_capacity(agent_split.images.len());
    for (i, img) in agent_split.images.iter().enumerate() {
        let snr_db = grid[i % grid.len()];
        let mut rng = stream_rng(cfg.data.seed, purpose::AGENT, 1_000_000 + i as u64);
        let rec = run_transmission(
            system,
            i,
            img,
            snr_db,
            cfg.eval.ratio,
            cfg.eval.ratio2,
            &Policy::Never,
            1.0,
            &mut rng,
        )?;
        scores.push(rec.score_r1);
    }
    percentile_upper(&scores, cfg.agent.threshold_percentile)
}

/// Stage 4: PPO over per-sample length-1 episodes collected with the frozen
/// link system on the dedicated agent split.
pub fn stage4_train_agent(
    cfg: &RunConfig,
    agent_split: &DatasetSplit,
    system: &LinkSystem,
    threshold: f64,
) -> Result<AgentTrainingOutcome> {
    let base_checksums: Vec<u64> = [
        &system.codec.encoder,
        &system.codec.check_encoder,
        &system.codec.joint_decoder,
        &system.codec.estimator,
    ]
    .iter()
    .map(|m| mlp_checksum(m))
    .collect();

    let mut init_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 4);
    let mut ac = ActorCritic::new(system.codec.dims.check_dim, cfg.agent.hidden, &mut init_rng)?;
    let mut adam = AdamState::new(cfg.agent.lr);
    let mut rollout_rng = stream_rng(cfg.data.seed, purpose::AGENT, 4);
    let mut update_rng = stream_rng(cfg.data.seed, purpose::AGENT, 5);

    // random-coin baseline for the training log
    let random_policy_mean_reward = {
        let mut rng = stream_rng(cfg.data.seed, purpose::AGENT, 6);
        let mut total = 0.0;
        for (i, img) in agent_split.images.iter().enumerate() {
            let snr_db = sample_snr(&cfg.channel.snr_db_grid, &mut rng);
            let flip: bool = rng.random();
            let policy = if flip { Policy::Always } else { Policy::Never };
            let rec = run_transmission(
                system,
                i,
                img,
                snr_db,
                cfg.eval.ratio,
                cfg.eval.ratio2,
                &policy,
                threshold,
                &mut rng,
            )?;
            total += rec.reward;
        }
        total / agent_split.images.len().max(1) as f64
    };

    let mut curve = Vec::with_capacity(cfg.agent.epochs);
    for epoch in 0..cfg.agent.epochs {
        let mut buffer = RolloutBuffer::new();
        let mut outage_count = 0usize;
        for (i, img) in agent_split.images.iter().enumerate() {
            let snr_db = sample_snr(&cfg.channel.snr_db_grid, &mut rollout_rng);
            let policy = Policy::Agent { ac: &ac, greedy: false };
            let rec = run_transmission(
                system,
                i,
                img,
                snr_db,
                cfg.eval.ratio,
                cfg.eval.ratio2,
                &policy,
                threshold,
                &mut rollout_rng,
            )?;
            let state = AgentState::from_record(&rec, threshold);
            let (_, value) = ac.evaluate(&state)?;
            let log_prob = rec.action_log_prob.ok_or_else(|| {
                Error::Training("agent rollout produced no log-probability".into())
            })?;
            if rec.final_score > threshold {
                outage_count += 1;
            }
            buffer.push(state, rec.action, log_prob, rec.reward, value, true);
        }

        let retx_ratio = buffer.actions.iter().filter(|&&a| a == 1).count() as f64
            / buffer.len() as f64;
        let mean_reward = buffer.mean_reward();
        let outage = outage_count as f64 / buffer.len() as f64;

        // entropy bonus decays linearly to zero across training
        let decay = 1.0 - epoch as f64 / cfg.agent.epochs.max(1) as f64;
        let ppo_cfg = PpoConfig {
            clip_eps: cfg.agent.clip_eps,
            epochs: cfg.agent.ppo_epochs,
            minibatch: cfg.agent.minibatch,
            value_coef: cfg.agent.value_coef,
            entropy_coef: cfg.agent.entropy_coef * decay,
        };
        agent::ppo_update(
            &mut ac,
            &buffer,
            &ppo_cfg,
            cfg.agent.gamma,
            cfg.agent.lambda,
            &mut adam,
            &mut update_rng,
        )?;

        curve.push(AgentCurvePoint { epoch: epoch + 1, mean_reward, retx_ratio, outage });
    }

    let after: Vec<u64> = [
        &system.codec.encoder,
        &system.codec.check_encoder,
        &system.codec.joint_decoder,
        &system.codec.estimator,
    ]
    .iter()
    .map(|m| mlp_checksum(m))
    .collect();
    if base_checksums != after {
        return Err(Error::Training("freeze contract violated: codec changed in stage 4".into()));
    }

    Ok(AgentTrainingOutcome {
        actor_critic: ac,
        curve,
        threshold,
        random_policy_mean_reward,
    })
}

// ---- checkpoint persistence for whole systems ----

const META_FEATURE_DIM: &str = "meta.feature_dim";
const META_CHECK_DIM: &str = "meta.check_dim";
const META_THRESHOLD: &str = "meta.threshold";

/// Stage-1 checkpoint: only the components stage 1 trains (encoder and
/// decoder) plus the dimension metadata.
pub fn save_backbone(path: &Path, codec: &CodecBundle) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.push_scalar(META_FEATURE_DIM, codec.dims.feature_dim as f64);
    ck.push_scalar(META_CHECK_DIM, codec.dims.check_dim as f64);
    ck.push_mlp(&codec.encoder);
    ck.push_mlp(&codec.joint_decoder);
    ck.save(path)
}

/// Serialize codec (+ optional retransmission bundle, agent, threshold) into
/// one checkpoint.
pub fn save_system(
    path: &Path,
    codec: &CodecBundle,
    retx: Option<&RetxBundle>,
    agent: Option<&ActorCritic>,
    threshold: Option<f64>,
) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.push_scalar(META_FEATURE_DIM, codec.dims.feature_dim as f64);
    ck.push_scalar(META_CHECK_DIM, codec.dims.check_dim as f64);
    if let Some(t) = threshold {
        ck.push_scalar(META_THRESHOLD, t);
    }
    ck.push_mlp(&codec.encoder);
    ck.push_mlp(&codec.check_encoder);
    ck.push_mlp(&codec.joint_decoder);
    ck.push_mlp(&codec.estimator);
    if let Some(r) = retx {
        ck.push_mlp(&r.second_encoder);
        ck.push_mlp(&r.entropy_optimizer);
        ck.push_mlp(&r.second_check_encoder);
        ck.push_mlp(&r.second_decoder);
    }
    if let Some(a) = agent {
        for net in a.components() {
            ck.push_mlp(net);
        }
    }
    ck.save(path)
}

/// A deserialized system; optional parts are present when the checkpoint
/// carries them.
pub struct LoadedSystem {
    pub codec: CodecBundle,
    pub retx: Option<RetxBundle>,
    pub agent: Option<ActorCritic>,
    pub threshold: Option<f64>,
}

/// Load and shape-check a system against the configuration.
pub fn load_system(path: &Path, cfg: &RunConfig) -> Result<LoadedSystem> {
    let ck = Checkpoint::load(path)?;
    let stored_k = ck
        .get_scalar(META_FEATURE_DIM)
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks meta.feature_dim".into()))?
        as usize;
    let stored_check = ck
        .get_scalar(META_CHECK_DIM)
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks meta.check_dim".into()))?
        as usize;
    if stored_k != cfg.codec.feature_dim || stored_check != cfg.codec.check_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained with K={stored_k}, k={stored_check} but the configuration asks for K={}, k={}",
            cfg.codec.feature_dim, cfg.codec.check_dim
        )));
    }

    let dims = cfg.codec_dims();
    // components absent from the checkpoint keep a deterministic seeded init,
    // so a stage-1 checkpoint does not pin the shapes of parts stage 2 trains
    let mut scaffold_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 0);
    let mut codec = CodecBundle::new(dims, &mut scaffold_rng)?;
    ck.load_mlp(&mut codec.encoder)?;
    ck.load_mlp(&mut codec.joint_decoder)?;
    if ck.get("chk.l0.w").is_some() {
        ck.load_mlp(&mut codec.check_encoder)?;
    }
    if ck.get("est.l0.w").is_some() {
        ck.load_mlp(&mut codec.estimator)?;
    }

    let retx = if ck.get("enc2.l0.w").is_some() {
        let mut retx_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 3);
        let mut r = RetxBundle::new(dims, &mut retx_rng)?;
        ck.load_mlp(&mut r.second_encoder)?;
        ck.load_mlp(&mut r.entropy_optimizer)?;
        ck.load_mlp(&mut r.second_check_encoder)?;
        ck.load_mlp(&mut r.second_decoder)?;
        Some(r)
    } else {
        None
    };

    let agent = if ck.get("actor.head.l0.w").is_some() {
        let hidden = ck
            .get("actor.trunk.l0.b")
            .map(|t| t.shape()[1])
            .ok_or_else(|| Error::Checkpoint("agent checkpoint lacks trunk".into()))?;
        let mut a = ActorCritic::new(dims.check_dim, hidden, &mut scaffold_rng)?;
        for net in a.components_mut() {
            ck.load_mlp(net)?;
        }
        Some(a)
    } else {
        None
    };

    Ok(LoadedSystem { codec, retx, agent, threshold: ck.get_scalar(META_THRESHOLD) })
}

/// Run stages `1..=upto` from scratch on freshly generated splits. Test and
/// acceptance helper; the CLI drives stages individually instead.
pub fn run_pipeline(cfg: &RunConfig, upto: usize) -> Result<(LinkSystem, Option<AgentTrainingOutcome>)> {
    let (codec_split, agent_split, _test) = crate::data::generate_splits(
        cfg.data.seed,
        (cfg.data.codec_train, cfg.data.agent_train, cfg.data.test),
        cfg.data.channels,
        cfg.data.height,
        cfg.data.width,
    )?;
    let projector = PerceptualProjector::new(
        cfg.data.seed,
        cfg.data.feature_count,
        cfg.data.channels,
        cfg.data.height,
        cfg.data.width,
    );
    let mut init_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 0);
    let mut codec = CodecBundle::new(cfg.codec_dims(), &mut init_rng)?;
    stage1_train_backbone(cfg, &codec_split, &mut codec)?;
    if upto >= 2 {
        stage2_train_check(cfg, &codec_split, &projector, &mut codec)?;
    }
    let mut retx = None;
    if upto >= 3 {
        let mut retx_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 3);
        let mut r = RetxBundle::new(cfg.codec_dims(), &mut retx_rng)?;
        stage3_train_retx(cfg, &codec_split, &projector, &codec, &mut r)?;
        retx = Some(r);
    }
    let system = LinkSystem { codec, retx, projector, channel_kind: cfg.channel.kind };
    let outcome = if upto >= 4 {
        let threshold = compute_threshold(cfg, &system, &agent_split)?;
        Some(stage4_train_agent(cfg, &agent_split, &system, threshold)?)
    } else {
        None
    };
    Ok((system, outcome))
}
