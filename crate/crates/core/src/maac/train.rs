use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Actor, LearnerConfig, Maac, ObsNormalizer, ReplayBuffer};
use crate::analytic::{Assignment, EeReport, NetworkModel, ACTIONS_PER_ED};
use crate::env::{EnvConfig, LoraEnv, Observation, Transition, OBS_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: usize,
    /// Environment steps between greedy evaluations.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 50_000,
            eval_interval: 2_500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 {
            return Err(Error::InvalidConfig("evaluation interval must be positive".into()));
        }
        Ok(())
    }
}

/// Averages over one training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub step: usize,
    pub episode: usize,
    pub mean_reward: f64,
    pub system_ee: f64,
    pub feasible_fraction: f64,
    pub critic_loss: Option<f64>,
    pub actor_grad_norm: Option<f64>,
}

/// Outcome of a greedy rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: usize,
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub feasible_fraction: f64,
    pub min_ee: f64,
    pub actions: Vec<usize>,
}

impl EvalRow {
    fn from_report(step: usize, report: &EeReport, actions: Vec<usize>) -> Self {
        EvalRow {
            step,
            system_ee: report.system_ee,
            mean_pdr: report.mean_pdr(),
            feasible_fraction: report.feasible_fraction(),
            min_ee: report.min_ee(),
            actions,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// The random starting assignment, before any learning.
    pub initial: Option<EvalRow>,
    pub episodes: Vec<EpisodeRow>,
    pub evals: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial: EvalRow,
    pub final_eval: EvalRow,
    pub log: TrainLog,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct EpisodeAccumulator {
    steps: usize,
    reward: f64,
    system_ee: f64,
    feasible: f64,
    updates: usize,
    critic_loss: f64,
    actor_grad_norm: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub env_config: EnvConfig,
    pub train_config: TrainConfig,
    pub learner: Maac,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub episode: usize,
    pub episode_step: usize,
    pub assignment: Vec<usize>,
    pub obs: Vec<[f64; OBS_DIM]>,
    pub initial_actions: Vec<usize>,
    pub log: TrainLog,
    accumulator: EpisodeAccumulator,
}

/// Owns the environment, learner, buffer and RNG of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    env: LoraEnv,
    state: Checkpoint,
}

fn arrays(obs: &[Observation]) -> Vec<[f64; OBS_DIM]> {
    obs.iter().map(|o| o.to_array()).collect()
}

impl Trainer {
    pub fn new(
        model: Arc<NetworkModel>,
        env_config: EnvConfig,
        learner_config: LearnerConfig,
        train_config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        train_config.validate()?;
        if env_config.episode_length == 0 {
            return Err(Error::InvalidConfig("episode length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = LoraEnv::new(model, env_config);
        let n = env.num_agents();
        let buffer = ReplayBuffer::new(learner_config.buffer_capacity)?;
        let mut learner = Maac::new(n, ACTIONS_PER_ED, learner_config, &mut rng)?;
        let obs = arrays(&env.reset(&mut rng)?);
        let report = env.last_report().expect("reset").clone();
        let assignment = env.assignment().expect("reset").actions();
        if learner.config.reward_scale.is_none() {
            let per_device = report.system_ee / n.max(1) as f64;
            learner.reward_scale = if per_device > 0.0 { per_device } else { 1.0 };
        }
        for o in &obs {
            learner.normalizer.update(o);
        }
        let log = TrainLog {
            initial: Some(EvalRow::from_report(0, &report, assignment.clone())),
            ..TrainLog::default()
        };
        Ok(Trainer {
            env,
            state: Checkpoint {
                version: CHECKPOINT_VERSION,
                env_config,
                train_config,
                learner,
                buffer,
                rng,
                step: 0,
                episode: 0,
                episode_step: 0,
                initial_actions: assignment.clone(),
                assignment,
                obs,
                log,
                accumulator: EpisodeAccumulator::default(),
            },
        })
    }

    /// Rebuilds a trainer from a checkpoint taken on the same network.
    pub fn from_checkpoint(model: Arc<NetworkModel>, state: Checkpoint) -> Result<Self> {
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", state.version)));
        }
        if state.learner.num_agents != model.num_eds() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} agents but the network has {} end devices",
                state.learner.num_agents,
                model.num_eds()
            )));
        }
        let mut env = LoraEnv::new(model, state.env_config);
        env.reset_to(Assignment::from_actions(&state.assignment)?)?;
        Ok(Trainer { env, state })
    }

    pub fn load(model: Arc<NetworkModel>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let state: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(model, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.state)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn learner(&self) -> &Maac {
        &self.state.learner
    }

    pub fn log(&self) -> &TrainLog {
        &self.state.log
    }

    pub fn step_count(&self) -> usize {
        self.state.step
    }

    /// Changes the step budget, e.g. to extend a resumed run.
    pub fn set_total_steps(&mut self, total_steps: usize) -> Result<()> {
        if total_steps < self.state.step {
            return Err(Error::Checkpoint(format!(
                "checkpoint is already at step {}, past the budget of {total_steps}",
                self.state.step
            )));
        }
        self.state.train_config.total_steps = total_steps;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.state.train_config.total_steps
    }

    /// One environment step plus any due update, episode end or evaluation.
    pub fn step(&mut self) -> Result<()> {
        let s = &mut self.state;
        let actions = s.learner.act(&s.obs, &mut s.rng)?;
        let out = self.env.step(&actions)?;
        let next_obs = arrays(&out.observations);
        for o in &next_obs {
            s.learner.normalizer.update(o);
        }
        let n = actions.len().max(1) as f64;
        let acc = &mut s.accumulator;
        acc.steps += 1;
        acc.reward += out.rewards.iter().sum::<f64>() / n;
        acc.system_ee += out.report.system_ee;
        acc.feasible += out.report.feasible_fraction();
        s.buffer.push(Transition {
            obs: std::mem::take(&mut s.obs),
            actions: actions.clone(),
            rewards: out.rewards,
            next_obs: next_obs.clone(),
        })?;
        s.assignment = actions;
        s.obs = next_obs;
        s.step += 1;
        s.episode_step += 1;

        let cfg = &s.learner.config;
        if s.step % cfg.update_interval == 0 && s.buffer.len() >= cfg.batch_size {
            for _ in 0..cfg.gradient_steps {
                let stats = s.learner.update(&s.buffer, &mut s.rng).map_err(|e| match e {
                    Error::Diverged(m) => Error::Diverged(format!("{m} at step {}", s.step)),
                    other => other,
                })?;
                s.accumulator.updates += 1;
                s.accumulator.critic_loss += stats.critic_loss;
                s.accumulator.actor_grad_norm +=
                    stats.actor_grad_norms.iter().sum::<f64>() / stats.actor_grad_norms.len().max(1) as f64;
            }
        }

        if s.episode_step == s.env_config.episode_length {
            let acc = std::mem::take(&mut s.accumulator);
            let k = acc.steps as f64;
            let u = acc.updates as f64;
            s.log.episodes.push(EpisodeRow {
                step: s.step,
                episode: s.episode,
                mean_reward: acc.reward / k,
                system_ee: acc.system_ee / k,
                feasible_fraction: acc.feasible / k,
                critic_loss: (acc.updates > 0).then(|| acc.critic_loss / u),
                actor_grad_norm: (acc.updates > 0).then(|| acc.actor_grad_norm / u),
            });
            s.episode += 1;
            s.episode_step = 0;
            s.obs = arrays(&self.env.reset(&mut s.rng)?);
            s.assignment = self.env.assignment().expect("reset").actions();
            for o in &s.obs {
                s.learner.normalizer.update(o);
            }
        }

        if s.step % s.train_config.eval_interval == 0 {
            let row = self.evaluate()?;
            self.state.log.evals.push(row);
        }
        Ok(())
    }

    /// Greedy rollout of one episode from the run's initial assignment;
    /// reports the last step.
    pub fn evaluate(&self) -> Result<EvalRow> {
        let (report, actions) = greedy_rollout(
            &self.state.learner.actors,
            &self.state.learner.normalizer,
            &self.env,
            &self.state.initial_actions,
        )?;
        Ok(EvalRow::from_report(self.state.step, &report, actions))
    }

    /// Decentralised part of the learner, enough to act and evaluate.
    pub fn policy(&self) -> PolicySnapshot {
        PolicySnapshot {
            version: CHECKPOINT_VERSION,
            step: self.state.step,
            actors: self.state.learner.actors.clone(),
            normalizer: self.state.learner.normalizer.clone(),
            env_config: self.state.env_config,
            initial_actions: self.state.initial_actions.clone(),
        }
    }

    /// Runs to `total_steps`, writing a checkpoint every `every` steps when a
    /// path is given. On divergence the error is returned and the last
    /// periodic checkpoint is left in place.
    pub fn run(&mut self, checkpoint: Option<(&Path, usize)>) -> Result<TrainOutcome> {
        self.run_until(self.state.train_config.total_steps, checkpoint)?;
        self.finish()
    }

    /// Advances to `step` (capped at `total_steps`).
    pub fn run_until(&mut self, step: usize, checkpoint: Option<(&Path, usize)>) -> Result<()> {
        let stop = step.min(self.state.train_config.total_steps);
        while self.state.step < stop {
            self.step()?;
            if let Some((path, every)) = checkpoint {
                if every > 0 && self.state.step % every == 0 {
                    self.save(path)?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<TrainOutcome> {
        let final_eval = match self.state.log.evals.last() {
            Some(row) if row.step == self.state.step => row.clone(),
            _ => self.evaluate()?,
        };
        Ok(TrainOutcome {
            initial: self.state.log.initial.clone().expect("set at construction"),
            final_eval,
            log: self.state.log.clone(),
        })
    }
}

fn greedy_rollout(
    actors: &[Actor],
    normalizer: &ObsNormalizer,
    env: &LoraEnv,
    start: &[usize],
) -> Result<(EeReport, Vec<usize>)> {
    if actors.len() != env.num_agents() {
        return Err(Error::LengthMismatch {
            expected: env.num_agents(),
            actual: actors.len(),
        });
    }
    let mut env = env.clone();
    let mut obs = arrays(&env.reset_to(Assignment::from_actions(start)?)?);
    let mut last = None;
    for _ in 0..env.config().episode_length {
        let actions = actors
            .iter()
            .zip(&obs)
            .map(|(a, o)| a.greedy(&normalizer.normalize(o)))
            .collect::<Result<Vec<_>>>()?;
        let out = env.step(&actions)?;
        obs = arrays(&out.observations);
        last = Some((out.report, actions));
    }
    last.ok_or_else(|| Error::InvalidConfig("episode length must be positive".into()))
}

/// Trained actors plus what is needed to replay the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub version: u32,
    pub step: usize,
    pub actors: Vec<Actor>,
    pub normalizer: ObsNormalizer,
    pub env_config: EnvConfig,
    pub initial_actions: Vec<usize>,
}

impl PolicySnapshot {
    pub fn load(path: &Path) -> Result<Self> {
        let snap: PolicySnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if snap.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported policy version {}", snap.version)));
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Greedy rollout from the recorded start; the final report and actions.
    pub fn rollout(&self, model: Arc<NetworkModel>) -> Result<(EeReport, Vec<usize>)> {
        let env = LoraEnv::new(model, self.env_config);
        greedy_rollout(&self.actors, &self.normalizer, &env, &self.initial_actions)
    }

    pub fn evaluate(&self, model: Arc<NetworkModel>) -> Result<EvalRow> {
        let (report, actions) = self.rollout(model)?;
        Ok(EvalRow::from_report(self.step, &report, actions))
    }
}
