//! Reference allocation policies.
//!
//! `maxmin_greedy` is a local-search stand-in for a max-min EE fairness
//! allocator; it does not reproduce any published algorithm.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{decode_action, encode_action, Assignment, NetworkModel, ACTIONS_PER_ED};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::maac::{AttentionMode, LearnerConfig, TrainConfig, TrainOutcome, Trainer};
use crate::radio::{SpreadingFactor, TxPower};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTag {
    Random,
    MinSfMaxTp,
    AdrLike,
    MaxminGreedy,
    MaloraU,
}

impl BaselineTag {
    pub const ALL: [BaselineTag; 5] = [
        BaselineTag::Random,
        BaselineTag::MinSfMaxTp,
        BaselineTag::AdrLike,
        BaselineTag::MaxminGreedy,
        BaselineTag::MaloraU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineTag::Random => "random",
            BaselineTag::MinSfMaxTp => "min_sf_max_tp",
            BaselineTag::AdrLike => "adr_like",
            BaselineTag::MaxminGreedy => "maxmin_greedy",
            BaselineTag::MaloraU => "malora_u",
        }
    }

    /// Whether the policy needs training rather than a one-shot assignment.
    pub fn is_learned(self) -> bool {
        self == BaselineTag::MaloraU
    }
}

impl fmt::Display for BaselineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline `{s}`")))
    }
}

/// Uniform over the 48 (SF, TP) pairs for every device.
pub fn assign_random<R: Rng + ?Sized>(num_eds: usize, rng: &mut R) -> Assignment {
    let actions: Vec<usize> = (0..num_eds).map(|_| rng.random_range(0..ACTIONS_PER_ED)).collect();
    Assignment::from_actions(&actions).expect("indices in range")
}

/// Smallest SF whose mean RSS at the nearest gateway, at maximum power,
/// clears the sensitivity; SF12 when none does.
pub fn assign_min_sf_max_tp(model: &NetworkModel) -> Assignment {
    let n = model.num_eds();
    let mut a = Assignment::uniform(n, SpreadingFactor::MAX, TxPower::MAX);
    for i in 0..n {
        let rss = model.mean_rss_at(i, model.topology.nearest_gateway(i), TxPower::MAX);
        a.sf[i] = SpreadingFactor::all()
            .find(|&sf| rss >= model.link.sensitivity(sf))
            .unwrap_or(SpreadingFactor::MAX);
    }
    a
}

/// First (TP, SF) pair in TP-major ascending order whose mean RSS minus
/// `margin_db` clears the sensitivity; SF12 at maximum power otherwise.
pub fn assign_adr_like(model: &NetworkModel, margin_db: f64) -> Assignment {
    let n = model.num_eds();
    let mut a = Assignment::uniform(n, SpreadingFactor::MAX, TxPower::MAX);
    for i in 0..n {
        let gw = model.topology.nearest_gateway(i);
        let pick = TxPower::all().find_map(|tp| {
            let rss = model.mean_rss_at(i, gw, tp);
            SpreadingFactor::all()
                .find(|&sf| rss - margin_db >= model.link.sensitivity(sf))
                .map(|sf| (sf, tp))
        });
        if let Some((sf, tp)) = pick {
            a.sf[i] = sf;
            a.tp[i] = tp;
        }
    }
    a
}

/// Local search on the minimum per-device EE. Starting from
/// [`assign_min_sf_max_tp`], each round moves the worst device to whichever
/// of its 48 settings most raises the network minimum, and stops when no
/// setting improves it or after `iterations` rounds.
pub fn assign_maxmin_greedy(model: &NetworkModel, iterations: usize, pdr_threshold: f64) -> Result<Assignment> {
    let mut current = assign_min_sf_max_tp(model);
    if model.num_eds() == 0 {
        return Ok(current);
    }
    let mut report = model.evaluate(&current, pdr_threshold)?;
    for _ in 0..iterations {
        let current_min = report.min_ee();
        let worst = report
            .ee_per_ed
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        let mut best: Option<(f64, Assignment, _)> = None;
        let own = encode_action(current.sf[worst], current.tp[worst]);
        for action in (0..ACTIONS_PER_ED).filter(|&a| a != own) {
            let (sf, tp) = decode_action(action)?;
            let mut candidate = current.clone();
            candidate.sf[worst] = sf;
            candidate.tp[worst] = tp;
            let r = model.evaluate(&candidate, pdr_threshold)?;
            let m = r.min_ee();
            if m > current_min && best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, candidate, r));
            }
        }
        match best {
            Some((_, a, r)) => {
                current = a;
                report = r;
            }
            None => break,
        }
    }
    Ok(current)
}

/// Parameters of the one-shot baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    pub adr_margin_db: f64,
    pub maxmin_iterations: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            adr_margin_db: 10.0,
            maxmin_iterations: 200,
        }
    }
}

/// Assignment of a one-shot baseline. Learned baselines must go through
/// [`run_malora_u`].
pub fn assign<R: Rng + ?Sized>(
    tag: BaselineTag,
    model: &NetworkModel,
    params: &BaselineParams,
    pdr_threshold: f64,
    rng: &mut R,
) -> Result<Assignment> {
    match tag {
        BaselineTag::Random => Ok(assign_random(model.num_eds(), rng)),
        BaselineTag::MinSfMaxTp => Ok(assign_min_sf_max_tp(model)),
        BaselineTag::AdrLike => Ok(assign_adr_like(model, params.adr_margin_db)),
        BaselineTag::MaxminGreedy => assign_maxmin_greedy(model, params.maxmin_iterations, pdr_threshold),
        BaselineTag::MaloraU => Err(Error::InvalidConfig(
            "malora_u is learned; train it instead of assigning it".into(),
        )),
    }
}

/// Trains the learner with attention pinned uniform.
pub fn run_malora_u(
    model: Arc<NetworkModel>,
    env_config: EnvConfig,
    learner_config: LearnerConfig,
    train_config: TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let learner_config = LearnerConfig {
        attention: AttentionMode::Uniform,
        ..learner_config
    };
    Trainer::new(model, env_config, learner_config, train_config, seed)?.run(None)
}
