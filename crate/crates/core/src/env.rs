//! Markov game around the analytic model: each end device is an agent that
//! observes its previous PDR and EE plus the previous system EE and picks one
//! of the 48 (SF, TP) pairs every step.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{Assignment, EeReport, NetworkModel, ACTIONS_PER_ED};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 3;

/// What agent `i` sees at step `t`: outcomes of step `t - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pdr_prev: f64,
    pub ee_prev: f64,
    pub ee_sys_prev: f64,
}

impl Observation {
    pub fn to_array(self) -> [f64; OBS_DIM] {
        [self.pdr_prev, self.ee_prev, self.ee_sys_prev]
    }

    pub fn from_report(report: &EeReport) -> Vec<Observation> {
        report
            .pdr_per_ed
            .iter()
            .zip(&report.ee_per_ed)
            .map(|(&pdr, &ee)| Observation {
                pdr_prev: pdr,
                ee_prev: ee,
                ee_sys_prev: report.system_ee,
            })
            .collect()
    }
}

/// One step of all agents, as stored in the replay buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<[f64; OBS_DIM]>,
}

impl Transition {
    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        for len in [self.obs.len(), self.rewards.len(), self.next_obs.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, actual: len });
            }
        }
        Ok(())
    }
}

/// Reward of agent `i`: zero below the PDR threshold, otherwise a blend of
/// the system EE and the agent's marginal effect on the average EE.
pub fn reward(report: &EeReport, agent: usize, beta: f64) -> f64 {
    if report.pdr_per_ed[agent] < report.pdr_threshold {
        return 0.0;
    }
    let n = report.num_eds();
    let sys = report.system_ee;
    let marginal = if n > 1 {
        sys / n as f64 - (sys - report.ee_per_ed[agent]) / (n - 1) as f64
    } else {
        0.0
    };
    beta * sys + (1.0 - beta) * marginal
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub pdr_threshold: f64,
    /// Weight of the system EE in the reward; `None` means `1 / N`.
    pub beta: Option<f64>,
    pub episode_length: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            pdr_threshold: 0.7,
            beta: None,
            episode_length: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub report: EeReport,
}

/// Environment state: the model plus the last assignment and its report.
#[derive(Debug, Clone)]
pub struct LoraEnv {
    model: Arc<NetworkModel>,
    config: EnvConfig,
    assignment: Option<Assignment>,
    report: Option<EeReport>,
}

impl LoraEnv {
    pub fn new(model: Arc<NetworkModel>, config: EnvConfig) -> Self {
        LoraEnv {
            model,
            config,
            assignment: None,
            report: None,
        }
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.model.num_eds()
    }

    pub fn beta(&self) -> f64 {
        self.config
            .beta
            .unwrap_or(1.0 / self.num_agents().max(1) as f64)
    }

    pub fn assignment(&self) -> Option<&Assignment> {
        self.assignment.as_ref()
    }

    pub fn last_report(&self) -> Option<&EeReport> {
        self.report.as_ref()
    }

    /// Starts from a uniformly random assignment and returns its outcomes as
    /// the first observations.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<Observation>> {
        let actions: Vec<usize> = (0..self.num_agents())
            .map(|_| rng.random_range(0..ACTIONS_PER_ED))
            .collect();
        self.reset_to(Assignment::from_actions(&actions)?)
    }

    /// Starts from a given assignment.
    pub fn reset_to(&mut self, assignment: Assignment) -> Result<Vec<Observation>> {
        let report = self.model.evaluate(&assignment, self.config.pdr_threshold)?;
        let obs = Observation::from_report(&report);
        self.assignment = Some(assignment);
        self.report = Some(report);
        Ok(obs)
    }

    /// Applies the joint action and scores it with the analytic model.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.report.is_none() {
            return Err(Error::NotReset);
        }
        if actions.len() != self.num_agents() {
            return Err(Error::LengthMismatch {
                expected: self.num_agents(),
                actual: actions.len(),
            });
        }
        let assignment = Assignment::from_actions(actions)?;
        let report = self.model.evaluate(&assignment, self.config.pdr_threshold)?;
        let beta = self.beta();
        let rewards = (0..self.num_agents()).map(|i| reward(&report, i, beta)).collect();
        let observations = Observation::from_report(&report);
        self.assignment = Some(assignment);
        self.report = Some(report.clone());
        Ok(StepOutcome {
            observations,
            rewards,
            report,
        })
    }
}

/// Per-step record of an episode for debugging dumps.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    rows: Vec<(usize, Vec<usize>, Vec<f64>, f64, f64)>,
}

impl EpisodeTrace {
    pub fn record(&mut self, step: usize, actions: &[usize], outcome: &StepOutcome) {
        self.rows.push((
            step,
            actions.to_vec(),
            outcome.rewards.clone(),
            outcome.report.system_ee,
            outcome.report.feasible_fraction(),
        ));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One row per (step, agent).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "agent", "action", "reward", "system_ee", "feasible_fraction"])?;
        for (step, actions, rewards, sys, feasible) in &self.rows {
            for (i, (a, r)) in actions.iter().zip(rewards).enumerate() {
                w.write_record([
                    step.to_string(),
                    i.to_string(),
                    a.to_string(),
                    r.to_string(),
                    sys.to_string(),
                    feasible.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
