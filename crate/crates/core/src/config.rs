//! Experiment configuration: one TOML file, unknown keys rejected, every
//! section defaulted.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::NetworkModel;
use crate::baselines::{BaselineParams, BaselineTag};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::link::LinkModel;
use crate::maac::{AttentionMode, LearnerConfig, TrainConfig};
use crate::radio::PhyConfig;
use crate::sim::SimConfig;
use crate::topology::{grid_gateways, NetworkTopology, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySpec {
    pub area_side_m: f64,
    pub num_eds: usize,
    /// Must be a perfect square unless `gateway_positions` is given.
    pub num_gateways: usize,
    pub num_channels: u32,
    /// Seed for random placement; the global seed when absent.
    pub placement_seed: Option<u64>,
    /// Explicit `[x, y]` end-device coordinates, overriding random placement.
    pub ed_positions: Option<Vec<[f64; 2]>>,
    /// Explicit `[x, y]` gateway coordinates, overriding the grid.
    pub gateway_positions: Option<Vec<[f64; 2]>>,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec {
            area_side_m: 8000.0,
            num_eds: 10,
            num_gateways: 4,
            num_channels: 1,
            placement_seed: None,
            ed_positions: None,
            gateway_positions: None,
        }
    }
}

impl TopologySpec {
    pub fn gateways(&self) -> Result<Vec<Point>> {
        if let Some(p) = &self.gateway_positions {
            return Ok(p.iter().map(|&[x, y]| Point::new(x, y)).collect());
        }
        let rows = (self.num_gateways as f64).sqrt().round() as usize;
        if rows * rows != self.num_gateways || rows == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} gateways do not form a square grid; give gateway_positions instead",
                self.num_gateways
            )));
        }
        Ok(grid_gateways(rows, self.area_side_m))
    }

    /// Topology with `num_eds` devices (explicit positions win when given).
    pub fn build(&self, num_eds: usize, default_seed: u64) -> Result<NetworkTopology> {
        let gws = self.gateways()?;
        let topo = match &self.ed_positions {
            Some(p) => {
                let n = p.len();
                NetworkTopology {
                    ed_positions: p.iter().map(|&[x, y]| Point::new(x, y)).collect(),
                    gw_positions: gws,
                    channel_of_ed: (0..n).map(|i| (i as u32 % self.num_channels.max(1)) + 1).collect(),
                    num_channels: self.num_channels,
                    area_side_m: self.area_side_m,
                }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.placement_seed.unwrap_or(default_seed));
                NetworkTopology::random(&mut rng, num_eds, gws, self.num_channels, self.area_side_m)
            }
        };
        topo.validate()?;
        Ok(topo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSpec {
    pub num_eds_sweep: Vec<usize>,
    pub mae_tolerance: f64,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        ValidateSpec {
            num_eds_sweep: vec![50, 100, 200],
            mae_tolerance: 0.025,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Malora,
    MaloraU,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Malora => "malora",
            Variant::MaloraU => "malora_u",
        }
    }

    pub fn attention(self) -> AttentionMode {
        match self {
            Variant::Malora => AttentionMode::Learned,
            Variant::MaloraU => AttentionMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub variant: Variant,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Random assignments averaged for the random-policy reference.
    pub random_draws: usize,
    /// Required ratio of the median final EE to the random mean EE.
    pub min_ratio_vs_random: f64,
    /// Required median fraction of devices meeting the PDR threshold.
    pub min_feasible_fraction: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            seeds: vec![1, 2, 3, 4, 5],
            total_steps: 50_000,
            eval_interval: 2_500,
            variant: Variant::Malora,
            checkpoint_interval: 0,
            random_draws: 1000,
            min_ratio_vs_random: 1.5,
            min_feasible_fraction: 0.8,
        }
    }
}

impl TrainSpec {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.total_steps,
            eval_interval: self.eval_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSpec {
    pub baselines: Vec<BaselineTag>,
    pub adr_margin_db: f64,
    pub maxmin_iterations: usize,
    pub random_draws: usize,
}

impl Default for CompareSpec {
    fn default() -> Self {
        let p = BaselineParams::default();
        CompareSpec {
            baselines: vec![
                BaselineTag::Random,
                BaselineTag::MinSfMaxTp,
                BaselineTag::AdrLike,
                BaselineTag::MaxminGreedy,
                BaselineTag::MaloraU,
            ],
            adr_margin_db: p.adr_margin_db,
            maxmin_iterations: p.maxmin_iterations,
            random_draws: 1000,
        }
    }
}

impl CompareSpec {
    pub fn params(&self) -> BaselineParams {
        BaselineParams {
            adr_margin_db: self.adr_margin_db,
            maxmin_iterations: self.maxmin_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub topology: TopologySpec,
    pub phy: PhyConfig,
    pub link: LinkModel,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub validate: ValidateSpec,
    pub train: TrainSpec,
    pub compare: CompareSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: None,
            topology: TopologySpec::default(),
            phy: PhyConfig::default(),
            link: LinkModel::default(),
            sim: SimConfig::default(),
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
            validate: ValidateSpec::default(),
            train: TrainSpec::default(),
            compare: CompareSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(toml::from_str(text)?)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Reads `path` (or the defaults), applies `section.key=value`
    /// overrides, then validates.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
            None => toml::Value::Table(toml::Table::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        self.phy.validate()?;
        self.link.validate()?;
        self.sim.validate()?;
        self.learner.validate()?;
        self.train.train_config().validate()?;
        if !(0.0..=1.0).contains(&self.env.pdr_threshold) {
            return Err(Error::InvalidConfig("pdr_threshold must lie in [0, 1]".into()));
        }
        if matches!(self.env.beta, Some(b) if !(0.0..=1.0).contains(&b)) {
            return Err(Error::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        if self.env.episode_length == 0 {
            return Err(Error::InvalidConfig("episode_length must be positive".into()));
        }
        if self.topology.num_channels == 0 {
            return Err(Error::InvalidConfig("num_channels must be positive".into()));
        }
        self.topology.gateways()?;
        if self.train.seeds.is_empty() {
            return Err(Error::InvalidConfig("train.seeds must not be empty".into()));
        }
        if self.train.random_draws == 0 || self.compare.random_draws == 0 {
            return Err(Error::InvalidConfig("random_draws must be positive".into()));
        }
        if !(self.validate.mae_tolerance > 0.0) {
            return Err(Error::InvalidConfig("mae_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Network for the configured topology with `num_eds` devices.
    pub fn model(&self, num_eds: usize) -> Result<NetworkModel> {
        let topo = self.topology.build(num_eds, self.seed)?;
        NetworkModel::new(topo, self.phy.clone(), self.link.clone())
    }

    /// Learner settings for a variant.
    pub fn learner_for(&self, variant: Variant) -> LearnerConfig {
        LearnerConfig {
            attention: variant.attention(),
            ..self.learner.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialise config: {e}")))
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Output directory precedence: explicit, then `env_var`, then the
    /// config, then `results`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>, env_var: Option<&str>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| env_var.filter(|s| !s.is_empty()).map(PathBuf::from))
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

/// Sets `a.b.c = value`; the value is parsed as TOML, falling back to a
/// bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{key}` does not name a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` does not name a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("sead = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[learner]\nhiden_width = 3").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.topology.placement_seed = Some(9);
        cfg.learner.reward_scale = Some(2.0);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::load_with_overrides(
            None,
            &[
                "seed=7".into(),
                "learner.hidden_width=32".into(),
                "train.variant=malora_u".into(),
                "validate.num_eds_sweep=[10, 20]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.learner.hidden_width, 32);
        assert_eq!(cfg.train.variant, Variant::MaloraU);
        assert_eq!(cfg.validate.num_eds_sweep, vec![10, 20]);
        assert!(ExperimentConfig::load_with_overrides(None, &["seed".into()]).is_err());
    }

    #[test]
    fn non_square_gateway_count_needs_positions() {
        assert!(ExperimentConfig::from_toml_str("[topology]\nnum_gateways = 3").is_err());
        let cfg = ExperimentConfig::from_toml_str(
            "[topology]\nnum_gateways = 3\ngateway_positions = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]",
        )
        .unwrap();
        assert_eq!(cfg.topology.gateways().unwrap().len(), 3);
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.resolve_output_dir(None, None), PathBuf::from("results"));
        cfg.output_dir = Some("cfg".into());
        assert_eq!(cfg.resolve_output_dir(None, Some("envdir")), PathBuf::from("envdir"));
        assert_eq!(cfg.resolve_output_dir(Some(Path::new("flag")), Some("envdir")), PathBuf::from("flag"));
        assert_eq!(cfg.resolve_output_dir(None, None), PathBuf::from("cfg"));
    }

    #[test]
    fn explicit_positions_are_used() {
        let cfg = ExperimentConfig::from_toml_str(
            "[topology]\ned_positions = [[100.0, 100.0], [7000.0, 300.0]]",
        )
        .unwrap();
        let m = cfg.model(99).unwrap();
        assert_eq!(m.num_eds(), 2);
    }
}
