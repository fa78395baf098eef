//! Multi-agent attention actor-critic learner: decentralised softmax actors,
//! a centralised critic with shared attention projections, soft target
//! networks and a replay buffer.

mod actor;
mod buffer;
mod critic;
mod normalizer;
mod train;

pub use actor::{advantages, argmax, counterfactual_baseline, entropy, sample_categorical, Actor};
pub use buffer::ReplayBuffer;
pub use critic::{AttentionCritic, AttentionMode, CriticPass};
pub use normalizer::ObsNormalizer;
pub use train::{
    Checkpoint, EpisodeRow, EvalRow, PolicySnapshot, TrainConfig, TrainLog, TrainOutcome, Trainer, CHECKPOINT_VERSION,
};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Transition, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, grad_norm, log_softmax_rows, softmax_rows, Optimizer, OptimizerKind, Params, DEFAULT_LEAK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub hidden_width: usize,
    pub attention_heads: usize,
    /// Discount `mu`.
    pub discount: f64,
    /// Entropy temperature `alpha`.
    pub entropy_temperature: f64,
    pub critic_learning_rate: f64,
    pub actor_learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps between update rounds.
    pub update_interval: usize,
    /// Gradient steps per update round.
    pub gradient_steps: usize,
    pub target_tau: f64,
    pub leak: f64,
    /// Rewards are divided by this before regression; `None` uses the mean
    /// per-device EE of the initial assignment.
    pub reward_scale: Option<f64>,
    /// Joint gradient-norm cap per network, if any.
    pub max_grad_norm: Option<f64>,
    pub attention: AttentionMode,
    pub optimizer: OptimizerKind,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden_width: 128,
            attention_heads: 4,
            discount: 0.99,
            entropy_temperature: 0.01,
            critic_learning_rate: 1e-3,
            actor_learning_rate: 1e-3,
            batch_size: 256,
            buffer_capacity: 50_000,
            update_interval: 4,
            gradient_steps: 1,
            target_tau: 0.005,
            leak: DEFAULT_LEAK,
            reward_scale: None,
            max_grad_norm: None,
            attention: AttentionMode::Learned,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.entropy_temperature >= 0.0 && self.entropy_temperature.is_finite()) {
            return bad("entropy temperature must be finite and nonnegative");
        }
        if !(self.critic_learning_rate > 0.0 && self.actor_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden_width == 0 || self.attention_heads == 0 || self.hidden_width % self.attention_heads != 0 {
            return bad("hidden width must be a positive multiple of the head count");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must be at least the (positive) minibatch size");
        }
        if self.update_interval == 0 || self.gradient_steps == 0 {
            return bad("update interval and gradient steps must be positive");
        }
        if !(self.target_tau > 0.0 && self.target_tau <= 1.0) {
            return bad("target tau must lie in (0, 1]");
        }
        if !(self.leak >= 0.0 && self.leak < 1.0) {
            return bad("leak must lie in [0, 1)");
        }
        if matches!(self.reward_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return bad("reward scale must be positive");
        }
        if matches!(self.max_grad_norm, Some(m) if !(m > 0.0)) {
            return bad("gradient-norm cap must be positive");
        }
        Ok(())
    }
}

/// A minibatch laid out per agent with normalised observations.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBatch {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Array1<f64>>,
    pub next_obs: Vec<Array2<f64>>,
}

impl JointBatch {
    pub fn rows(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }
}

/// Squared-error critic loss summed over agents and averaged over rows,
/// with gradients for every critic parameter.
pub fn critic_loss(
    critic: &AttentionCritic,
    obs: &[Array2<f64>],
    actions: &[Vec<usize>],
    targets: &[Array1<f64>],
) -> Result<(f64, Vec<Array2<f64>>)> {
    let pass = critic.forward(obs, actions)?;
    let rows = actions[0].len() as f64;
    let mut loss = 0.0;
    let mut grad_q = Vec::with_capacity(critic.num_agents);
    for i in 0..critic.num_agents {
        if targets[i].len() != actions[i].len() {
            return Err(Error::LengthMismatch {
                expected: actions[i].len(),
                actual: targets[i].len(),
            });
        }
        let mut g = Array2::zeros(pass.q[i].raw_dim());
        for (b, (&a, &y)) in actions[i].iter().zip(&targets[i]).enumerate() {
            let err = pass.q[i][[b, a]] - y;
            loss += err * err / rows;
            g[[b, a]] = 2.0 * err / rows;
        }
        grad_q.push(g);
    }
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("critic loss is {loss}")));
    }
    Ok((loss, critic.backward(&pass, &grad_q)?))
}

/// Losses and gradient norms from one update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maac {
    pub config: LearnerConfig,
    pub num_agents: usize,
    pub num_actions: usize,
    pub actors: Vec<Actor>,
    pub target_actors: Vec<Actor>,
    pub critic: AttentionCritic,
    pub target_critic: AttentionCritic,
    pub actor_optimizers: Vec<Optimizer>,
    pub critic_optimizer: Optimizer,
    pub normalizer: ObsNormalizer,
    pub reward_scale: f64,
    pub updates: u64,
}

impl Maac {
    pub fn new<R: Rng + ?Sized>(num_agents: usize, num_actions: usize, config: LearnerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_width;
        let actors: Vec<Actor> = (0..num_agents)
            .map(|_| Actor::new(rng, h, num_actions, config.leak))
            .collect();
        let critic = AttentionCritic::new(
            rng,
            num_agents,
            num_actions,
            h,
            config.attention_heads,
            config.attention,
            config.leak,
        )?;
        let actor_optimizers = actors
            .iter()
            .map(|a| Optimizer::new(a, config.optimizer, config.actor_learning_rate))
            .collect();
        let critic_optimizer = Optimizer::new(&critic, config.optimizer, config.critic_learning_rate);
        Ok(Maac {
            reward_scale: config.reward_scale.unwrap_or(1.0),
            config,
            num_agents,
            num_actions,
            target_actors: actors.clone(),
            actors,
            target_critic: critic.clone(),
            critic,
            actor_optimizers,
            critic_optimizer,
            normalizer: ObsNormalizer::default(),
            updates: 0,
        })
    }

    /// Samples each agent's action from its own (normalised) observation.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[[f64; OBS_DIM]], rng: &mut R) -> Result<Vec<usize>> {
        self.check_agents(obs.len())?;
        self.actors
            .iter()
            .zip(obs)
            .map(|(a, o)| a.sample(&self.normalizer.normalize(o), rng))
            .collect()
    }

    /// Argmax action of every agent.
    pub fn act_greedy(&self, obs: &[[f64; OBS_DIM]]) -> Result<Vec<usize>> {
        self.check_agents(obs.len())?;
        self.actors
            .iter()
            .zip(obs)
            .map(|(a, o)| a.greedy(&self.normalizer.normalize(o)))
            .collect()
    }

    fn check_agents(&self, n: usize) -> Result<()> {
        if n != self.num_agents {
            return Err(Error::LengthMismatch {
                expected: self.num_agents,
                actual: n,
            });
        }
        Ok(())
    }

    pub fn joint_batch(&self, transitions: &[&Transition]) -> Result<JointBatch> {
        let n = self.num_agents;
        for t in transitions {
            self.check_agents(t.num_agents())?;
        }
        let mut batch = JointBatch {
            obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n),
        };
        for i in 0..n {
            batch.obs.push(self.normalizer.batch(transitions.iter().map(|t| &t.obs[i])));
            batch.next_obs.push(self.normalizer.batch(transitions.iter().map(|t| &t.next_obs[i])));
            batch.actions.push(transitions.iter().map(|t| t.actions[i]).collect());
            batch.rewards.push(transitions.iter().map(|t| t.rewards[i]).collect());
        }
        Ok(batch)
    }

    fn sample_joint<R: Rng + ?Sized>(probs: &[Array2<f64>], rng: &mut R) -> Vec<Vec<usize>> {
        probs
            .iter()
            .map(|p| {
                p.rows()
                    .into_iter()
                    .map(|row| sample_categorical(row.as_slice().expect("contiguous"), rng))
                    .collect()
            })
            .collect()
    }

    /// Soft-Bellman targets from the target networks. The own-action
    /// expectation is exact; the other agents' next actions are sampled.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &JointBatch, rng: &mut R) -> Result<Vec<Array1<f64>>> {
        let alpha = self.config.entropy_temperature;
        let mu = self.config.discount;
        let mut logits = Vec::with_capacity(self.num_agents);
        for (a, o) in self.target_actors.iter().zip(&batch.next_obs) {
            logits.push(a.logits(o)?);
        }
        let probs: Vec<_> = logits.iter().map(softmax_rows).collect();
        let next_actions = Self::sample_joint(&probs, rng);
        let pass = if mu > 0.0 {
            Some(self.target_critic.forward(&batch.next_obs, &next_actions)?)
        } else {
            None
        };
        let mut targets = Vec::with_capacity(self.num_agents);
        for i in 0..self.num_agents {
            let mut y = &batch.rewards[i] / self.reward_scale;
            if let Some(pass) = &pass {
                let log_pi = log_softmax_rows(&logits[i]);
                let soft = (&probs[i] * &(&pass.q[i] - &(log_pi * alpha))).sum_axis(ndarray::Axis(1));
                y.scaled_add(mu, &soft);
            }
            targets.push(y);
        }
        Ok(targets)
    }

    /// One regression step on the critic; returns the loss and gradient norm.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &JointBatch, rng: &mut R) -> Result<(f64, f64)> {
        let targets = self.critic_targets(batch, rng)?;
        let (loss, mut grads) = critic_loss(&self.critic, &batch.obs, &batch.actions, &targets)?;
        let norm = match self.config.max_grad_norm {
            Some(m) => clip_grad_norm(&mut grads, m),
            None => grad_norm(&grads),
        };
        if !norm.is_finite() {
            return Err(Error::Diverged(format!("critic gradient norm is {norm}")));
        }
        self.critic_optimizer.apply(&mut self.critic, &grads);
        if !self.critic.all_finite() {
            return Err(Error::Diverged("critic parameters became non-finite".into()));
        }
        Ok((loss, norm))
    }

    /// One policy-gradient step per actor, with every agent's action
    /// resampled from the current policies. Returns per-agent gradient norms.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &JointBatch, rng: &mut R) -> Result<Vec<f64>> {
        let mut probs = Vec::with_capacity(self.num_agents);
        for (a, o) in self.actors.iter().zip(&batch.obs) {
            probs.push(a.probabilities(o)?);
        }
        let actions = Self::sample_joint(&probs, rng);
        let pass = self.critic.forward(&batch.obs, &actions)?;
        let alpha = self.config.entropy_temperature;
        let mut norms = Vec::with_capacity(self.num_agents);
        for i in 0..self.num_agents {
            let (loss, mut grads) = self.actors[i].policy_loss(&batch.obs[i], &pass.q[i], alpha)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("actor {i} loss is {loss}")));
            }
            let norm = match self.config.max_grad_norm {
                Some(m) => clip_grad_norm(&mut grads, m),
                None => grad_norm(&grads),
            };
            self.actor_optimizers[i].apply(&mut self.actors[i], &grads);
            if !self.actors[i].all_finite() {
                return Err(Error::Diverged(format!("actor {i} parameters became non-finite")));
            }
            norms.push(norm);
        }
        Ok(norms)
    }

    /// Polyak-averages every target network towards its online network.
    pub fn update_targets(&mut self) {
        let tau = self.config.target_tau;
        self.target_critic.soft_update_from(&self.critic, tau);
        for (t, a) in self.target_actors.iter_mut().zip(&self.actors) {
            t.soft_update_from(a, tau);
        }
    }

    pub fn hard_sync_targets(&mut self) {
        self.target_critic.hard_update_from(&self.critic);
        for (t, a) in self.target_actors.iter_mut().zip(&self.actors) {
            t.hard_update_from(a);
        }
    }

    /// Samples a minibatch and runs critic, actor and target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats> {
        let transitions = buffer.sample(rng, self.config.batch_size)?;
        let batch = self.joint_batch(&transitions)?;
        let (critic_loss, critic_grad_norm) = self.critic_update(&batch, rng)?;
        let actor_grad_norms = self.actor_update(&batch, rng)?;
        self.update_targets();
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            critic_grad_norm,
            actor_grad_norms,
        })
    }
}
