//! The condition-aware retransmission decision agent: state construction,
//! grouped actor/critic networks, the sparse reward table, generalized
//! advantage estimation, and clipped-surrogate policy updates.

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Mlp};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// SNR normalization shared with the codec conditioning.
use crate::codec::SNR_SCALE;

/// Decision input for one sample after its initial round. The codeword is the
/// received (noisy, equalized) check codeword — the same tensor the decoder
/// saw.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub snr_db: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub estimate: f64,
    /// `estimate - threshold`, precomputed.
    pub deviation: f64,
    pub check_codeword: Vec<f64>,
}

impl AgentState {
    /// Build from a finished transmission record. The codeword is the
    /// record's *received* round-1 check codeword.
    pub fn from_record(record: &crate::harq::TransmissionRecord, threshold: f64) -> Self {
        AgentState::from_round(
            record.snr_db,
            record.ratio,
            threshold,
            record.estimate_r1,
            record.recv_check.clone(),
        )
    }

    /// Build from a finished initial round.
    pub fn from_round(
        snr_db: f64,
        ratio: f64,
        threshold: f64,
        estimate: f64,
        check_codeword: Vec<f64>,
    ) -> Self {
        AgentState {
            snr_db,
            ratio,
            threshold,
            estimate,
            deviation: estimate - threshold,
            check_codeword,
        }
    }

    /// Feature groups: channel conditions, quality numbers, raw codeword.
    fn groups(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            vec![self.snr_db / SNR_SCALE, self.ratio],
            vec![self.threshold, self.estimate, self.deviation],
            self.check_codeword.clone(),
        )
    }
}

/// Actor-critic with per-group input projections, a shared trunk, a 2-logit
/// actor head and a scalar critic head.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub proj_channel: Mlp,
    pub proj_quality: Mlp,
    pub proj_check: Mlp,
    pub trunk: Mlp,
    pub actor_head: Mlp,
    pub critic_head: Mlp,
    pub check_dim: usize,
}

impl ActorCritic {
    pub fn new<R: Rng>(check_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(ActorCritic {
            proj_channel: Mlp::new(
                "actor.proj_channel",
                &[2, hidden],
                Activation::Identity,
                Activation::Identity,
                rng,
            )?,
            proj_quality: Mlp::new(
                "actor.proj_quality",
                &[3, hidden],
                Activation::Identity,
                Activation::Identity,
                rng,
            )?,
            proj_check: Mlp::new(
                "actor.proj_check",
                &[check_dim, hidden],
                Activation::Identity,
                Activation::Identity,
                rng,
            )?,
            trunk: Mlp::new(
                "actor.trunk",
                &[3 * hidden, hidden, hidden],
                Activation::Relu,
                Activation::Relu,
                rng,
            )?,
            actor_head: Mlp::new(
                "actor.head",
                &[hidden, 2],
                Activation::Identity,
                Activation::Identity,
                rng,
            )?,
            critic_head: Mlp::new(
                "critic.head",
                &[hidden, 1],
                Activation::Identity,
                Activation::Identity,
                rng,
            )?,
            check_dim,
        })
    }

    pub fn components(&self) -> [&Mlp; 6] {
        [
            &self.proj_channel,
            &self.proj_quality,
            &self.proj_check,
            &self.trunk,
            &self.actor_head,
            &self.critic_head,
        ]
    }

    pub fn components_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.proj_channel,
            &mut self.proj_quality,
            &mut self.proj_check,
            &mut self.trunk,
            &mut self.actor_head,
            &mut self.critic_head,
        ]
    }

    /// Plain inference: (logits, value).
    pub fn evaluate(&self, s: &AgentState) -> Result<([f64; 2], f64)> {
        if s.check_codeword.len() != self.check_dim {
            return Err(Error::Dimension(format!(
                "agent built for check dim {}, state carries {}",
                self.check_dim,
                s.check_codeword.len()
            )));
        }
        let (ch, q, cw) = s.groups();
        let mut latent = self.proj_channel.run(&ch)?;
        latent.extend(self.proj_quality.run(&q)?);
        latent.extend(self.proj_check.run(&cw)?);
        let features = self.trunk.run(&latent)?;
        let logits = self.actor_head.run(&features)?;
        let value = self.critic_head.run(&features)?[0];
        Ok(([logits[0], logits[1]], value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// One decision: the chosen action, its log-probability, and the critic value.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub action: u8,
    pub log_prob: f64,
    pub value: f64,
}

fn log_softmax2(logits: [f64; 2]) -> [f64; 2] {
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Draw (or take the argmax of) the 2-way categorical over
/// {accept = 0, retransmit = 1}.
pub fn act<R: Rng>(ac: &ActorCritic, s: &AgentState, mode: ActMode, rng: &mut R) -> Result<Decision> {
    let (logits, value) = ac.evaluate(s)?;
    let log_probs = log_softmax2(logits);
    let action = match mode {
        ActMode::Greedy => u8::from(logits[1] > logits[0]),
        ActMode::Sample => {
            let u: f64 = rng.random_range(0.0..1.0);
            u8::from(u >= log_probs[0].exp())
        }
    };
    Ok(Decision { action, log_prob: log_probs[action as usize], value })
}

/// The sparse reward table. `score_r2` must be present exactly when the
/// action was a retransmission.
///
/// | pre > th | post <= th | action | reward |
/// |----------|-----------|--------|--------|
/// | yes      | yes       | 1      | +10.0  |
/// | no       | -         | 0      | +0.5   |
/// | yes      | no        | 1      | -0.5   |
/// | yes      | -         | 0      | -5.0   |
/// | no       | -         | 1      | -1.0   |
pub fn reward(score_r1: f64, score_r2: Option<f64>, action: u8, threshold: f64) -> Result<f64> {
    let pre_bad = score_r1 > threshold;
    match action {
        0 => {
            if score_r2.is_some() {
                return Err(Error::Usage("score_r2 given although no retransmission ran".into()));
            }
            Ok(if pre_bad { -5.0 } else { 0.5 })
        }
        1 => {
            let post = score_r2.ok_or_else(|| {
                Error::Usage("reward for action 1 requires the round-2 score".into())
            })?;
            if pre_bad {
                Ok(if post <= threshold { 10.0 } else { -0.5 })
            } else {
                Ok(-1.0)
            }
        }
        other => Err(Error::Usage(format!("action must be 0 or 1, got {other}"))),
    }
}

/// Per-step rollout storage.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub states: Vec<AgentState>,
    pub actions: Vec<u8>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        state: AgentState,
        action: u8,
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        self.states.push(state);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }

    /// Compact stats for divergence diagnostics.
    pub fn debug_summary(&self) -> String {
        let n = self.len();
        let retx = self.actions.iter().filter(|&&a| a == 1).count();
        format!(
            "buffer: {} steps, {} retransmissions, mean reward {:.4}, value range [{:.4}, {:.4}]",
            n,
            retx,
            self.mean_reward(),
            self.values.iter().cloned().fold(f64::INFINITY, f64::min),
            self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Generalized advantage estimation over a completed buffer.
///
/// `delta_t = r_t + gamma (1 - d_t) V(s_{t+1}) - V(s_t)`, advantages are the
/// `(gamma lambda)`-discounted sums of deltas truncated at episode ends, and
/// returns are `advantage + V(s_t)`.
pub fn gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let not_done = if buffer.dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { buffer.values[t + 1] } else { 0.0 };
        let delta = buffer.rewards[t] + gamma * not_done * next_value - buffer.values[t];
        running = delta + gamma * lambda * not_done * running;
        advantages[t] = running;
    }
    let returns = advantages
        .iter()
        .zip(&buffer.values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// PPO hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig { clip_eps: 0.2, epochs: 4, minibatch: 256, value_coef: 0.5, entropy_coef: 0.01 }
    }
}

/// Losses averaged over the update's minibatches.
#[derive(Debug, Clone, Copy, Default)]
pub struct PpoLosses {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
}

fn state_matrix(tape: &mut Tape, states: &[&AgentState], pick: fn(&AgentState) -> Vec<f64>) -> Var {
    let rows = states.len();
    let cols = pick(states[0]).len();
    let mut data = Vec::with_capacity(rows * cols);
    for s in states {
        data.extend(pick(s));
    }
    tape.constant(Tensor::matrix(rows, cols, data).unwrap())
}

/// Taped batch forward of the actor-critic. Returns (log-softmax logits,
/// values) along with the bound components for gradient extraction.
pub struct TapedPolicy {
    pub log_probs: Var,
    pub values: Var,
    bound: Vec<crate::nn::BoundMlp>,
}

pub fn taped_policy(tape: &mut Tape, ac: &ActorCritic, states: &[&AgentState]) -> TapedPolicy {
    let ch = state_matrix(tape, states, |s| vec![s.snr_db / SNR_SCALE, s.ratio]);
    let q = state_matrix(tape, states, |s| vec![s.threshold, s.estimate, s.deviation]);
    let cw = state_matrix(tape, states, |s| s.check_codeword.clone());

    let b_ch = ac.proj_channel.bind(tape);
    let b_q = ac.proj_quality.bind(tape);
    let b_cw = ac.proj_check.bind(tape);
    let b_trunk = ac.trunk.bind(tape);
    let b_actor = ac.actor_head.bind(tape);
    let b_critic = ac.critic_head.bind(tape);

    let h_ch = b_ch.forward(tape, ch);
    let h_q = b_q.forward(tape, q);
    let h_cw = b_cw.forward(tape, cw);
    let latent = tape.concat_cols(&[h_ch, h_q, h_cw]);
    let features = b_trunk.forward(tape, latent);
    let logits = b_actor.forward(tape, features);
    let log_probs = tape.log_softmax_rows(logits);
    let values = b_critic.forward(tape, features);

    TapedPolicy {
        log_probs,
        values,
        bound: vec![b_ch, b_q, b_cw, b_trunk, b_actor, b_critic],
    }
}

impl TapedPolicy {
    pub fn write_grads(&self, grads: &crate::tape::Gradients, ac: &mut ActorCritic) {
        for (bound, net) in self.bound.iter().zip(ac.components_mut()) {
            bound.write_grads(grads, net);
        }
    }
}

/// Clipped-surrogate PPO update over the buffer. Advantages are normalized
/// to zero mean and unit variance before the update.
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    gamma: f64,
    lambda: f64,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<PpoLosses> {
    if buffer.is_empty() {
        return Err(Error::Usage("ppo_update on an empty buffer".into()));
    }
    let n = buffer.len();
    let (mut advantages, returns) = gae(buffer, gamma, lambda);

    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for a in &mut advantages {
        *a = (*a - mean) / std;
    }

    let mut totals = PpoLosses::default();
    let mut batches = 0usize;
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        // Fisher-Yates shuffle on the shared stream
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(cfg.minibatch.max(1)) {
            let states: Vec<&AgentState> = chunk.iter().map(|&i| &buffer.states[i]).collect();
            let actions: Vec<usize> = chunk.iter().map(|&i| buffer.actions[i] as usize).collect();
            let old_lp: Vec<f64> = chunk.iter().map(|&i| buffer.log_probs[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let m = chunk.len();

            let mut tape = Tape::new();
            let policy = taped_policy(&mut tape, ac, &states);

            let new_lp = tape.select_cols(policy.log_probs, actions);
            let old_lp_v = tape.constant(Tensor::matrix(m, 1, old_lp).unwrap());
            let diff = tape.sub(new_lp, old_lp_v);
            let ratio = tape.exp(diff);
            let adv_v = tape.constant(Tensor::matrix(m, 1, adv).unwrap());
            let surr1 = tape.mul(ratio, adv_v);
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let surr2 = tape.mul(clipped, adv_v);
            let surr = tape.min_elem(surr1, surr2);
            let mean_surr = tape.mean_all(surr);
            let actor_loss = tape.scale(mean_surr, -1.0);

            let ret_v = tape.constant(Tensor::matrix(m, 1, ret).unwrap());
            let critic_loss = tape.mse(policy.values, ret_v);

            // entropy = -sum_a p log p, averaged over the batch
            let probs = tape.exp(policy.log_probs);
            let p_logp = tape.mul(probs, policy.log_probs);
            let row_sums = tape.sum_cols(p_logp);
            let mean_neg_entropy = tape.mean_all(row_sums);
            let entropy = tape.scale(mean_neg_entropy, -1.0);

            let critic_scaled = tape.scale(critic_loss, cfg.value_coef);
            let entropy_scaled = tape.scale(entropy, -cfg.entropy_coef);
            let partial = tape.add(actor_loss, critic_scaled);
            let loss = tape.add(partial, entropy_scaled);

            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "PPO loss became {loss_value}; {}",
                    buffer.debug_summary()
                )));
            }

            let grads = tape.backward(loss)?;
            policy.write_grads(&grads, ac);
            let mut params = Vec::new();
            let mut names = Vec::new();
            for net in ac.components_mut() {
                names.extend(net.param_names());
                params.extend(net.params_mut());
            }
            adam.step(&mut params, &names)?;

            totals.actor += tape.value(actor_loss).data()[0];
            totals.critic += tape.value(critic_loss).data()[0];
            totals.entropy += tape.value(entropy).data()[0];
            batches += 1;
        }
    }
    totals.actor /= batches as f64;
    totals.critic /= batches as f64;
    totals.entropy /= batches as f64;
    Ok(totals)
}
