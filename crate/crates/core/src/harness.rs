//! Experiment pipelines behind the command-line tool. Every table is written
//! twice, as CSV (with `#` metadata lines) and as JSON carrying the same rows.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{decode_action, Assignment, EeReport, NetworkModel};
use crate::baselines::{self, BaselineTag};
use crate::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::maac::{EvalRow, PolicySnapshot, TrainOutcome, Trainer};
use crate::sim::{simulate, SimConfig};
use crate::stats::{median, Summary};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Destination directory plus the provenance stamped on every file.
#[derive(Debug, Clone)]
pub struct OutputSink {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
}

#[derive(Serialize)]
struct JsonTable<'a, T> {
    schema: &'a str,
    version: u32,
    config_hash: &'a str,
    seed: u64,
    rows: &'a [T],
}

impl OutputSink {
    /// Creates `dir` and writes the resolved configuration into it.
    pub fn new(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let hash = config.hash()?;
        let text = format!("# config_hash={hash}\n{}", config.to_toml()?);
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), text)?;
        Ok(OutputSink {
            dir: dir.to_path_buf(),
            config_hash: hash,
            seed: config.seed,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Writes `<name>.csv` and `<name>.json`; returns both paths.
    pub fn write_table<T: Serialize>(&self, name: &str, schema: &str, rows: &[T]) -> Result<Vec<PathBuf>> {
        let csv_path = self.path(&format!("{name}.csv"));
        let mut out = format!(
            "# schema={schema} version={SCHEMA_VERSION}\n# config_hash={} seed={}\n",
            self.config_hash, self.seed
        )
        .into_bytes();
        {
            let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(&mut out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        std::fs::write(&csv_path, out)?;
        let json_path = self.path(&format!("{name}.json"));
        let table = JsonTable {
            schema,
            version: SCHEMA_VERSION,
            config_hash: &self.config_hash,
            seed: self.seed,
            rows,
        };
        let mut text = serde_json::to_string_pretty(&table)?;
        text.push('\n');
        std::fs::write(&json_path, text)?;
        Ok(vec![csv_path, json_path])
    }
}

/// One pass/fail check of a pipeline. Non-gating rows are reported but do
/// not affect the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub gate: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub gating: bool,
}

impl GateRow {
    fn at_least(gate: &str, value: f64, threshold: f64, gating: bool) -> Self {
        GateRow {
            gate: gate.to_string(),
            value,
            threshold,
            pass: value >= threshold,
            gating,
        }
    }

    fn at_most(gate: &str, value: f64, threshold: f64) -> Self {
        GateRow {
            gate: gate.to_string(),
            value,
            threshold,
            pass: value <= threshold,
            gating: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineReport {
    pub files: Vec<PathBuf>,
    pub gates: Vec<GateRow>,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().filter(|g| g.gating).all(|g| g.pass)
    }

    fn finish(mut self, sink: &OutputSink, name: &str) -> Result<Self> {
        let files = sink.write_table(name, "gates", &self.gates)?;
        self.files.extend(files);
        Ok(self)
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("{what} produced a non-finite value {v}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub num_eds: usize,
    pub replications: usize,
    pub mae_mean: f64,
    pub mae_std: Option<f64>,
    pub mae_ci95_low: Option<f64>,
    pub mae_ci95_high: Option<f64>,
    pub analytic_mean_pdr: f64,
    pub sim_mean_pdr: f64,
    pub packets_sent: u64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Simulator settings used by the pipelines: the global seed drives the
/// simulator stream.
pub fn pipeline_sim_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig {
        rng_seed: cfg.seed,
        ..cfg.sim.clone()
    }
}

/// Analytic model against the simulator over the configured size sweep,
/// under the min-SF/max-TP assignment.
pub fn validate_model(cfg: &ExperimentConfig, sink: &OutputSink) -> Result<(Vec<MaeRow>, PipelineReport)> {
    let sim_cfg = pipeline_sim_config(cfg);
    let tol = cfg.validate.mae_tolerance;
    let mut rows = Vec::new();
    let mut report = PipelineReport::default();
    for &n in &cfg.validate.num_eds_sweep {
        let model = cfg.model(n)?;
        let a = baselines::assign_min_sf_max_tp(&model);
        let analytic = model.evaluate(&a, cfg.env.pdr_threshold)?;
        let sim = simulate(&model, &a, &sim_cfg)?;
        let s = sim.mae_summary(&analytic)?;
        check_finite("validation", &[s.mean])?;
        let ci = s.ci95();
        let row = MaeRow {
            num_eds: model.num_eds(),
            replications: sim.replications.len(),
            mae_mean: s.mean,
            mae_std: s.std_dev,
            mae_ci95_low: ci.map(|c| c.0),
            mae_ci95_high: ci.map(|c| c.1),
            analytic_mean_pdr: analytic.mean_pdr(),
            sim_mean_pdr: sim.pdr_per_ed.iter().sum::<f64>() / sim.pdr_per_ed.len().max(1) as f64,
            packets_sent: sim.packets_sent.iter().sum(),
            tolerance: tol,
            pass: s.mean <= tol,
        };
        report
            .gates
            .push(GateRow::at_most(&format!("mae_n{}", row.num_eds), row.mae_mean, tol));
        rows.push(row);
    }
    report.files.extend(sink.write_table("validate_mae", "validate_mae", &rows)?);
    Ok((rows, report.finish(sink, "validate_gates")?))
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub feasible_fraction: f64,
    pub min_ee: f64,
}

impl From<&EvalRow> for CurveRow {
    fn from(e: &EvalRow) -> Self {
        CurveRow {
            step: e.step,
            system_ee: e.system_ee,
            mean_pdr: e.mean_pdr,
            feasible_fraction: e.feasible_fraction,
            min_ee: e.min_ee,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: usize,
    pub seeds: usize,
    pub system_ee_mean: f64,
    pub system_ee_median: f64,
    pub system_ee_ci95_low: Option<f64>,
    pub system_ee_ci95_high: Option<f64>,
    pub feasible_fraction_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummaryRow {
    pub variant: String,
    pub seed: u64,
    pub initial_system_ee: f64,
    pub final_system_ee: f64,
    pub final_mean_pdr: f64,
    pub final_feasible_fraction: f64,
    pub random_mean_system_ee: f64,
    pub ratio_vs_random: f64,
}

/// Mean report of `draws` uniformly random assignments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomReference {
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub feasible_fraction: f64,
    pub min_ee: f64,
}

pub fn random_reference(model: &NetworkModel, draws: usize, pdr_threshold: f64, seed: u64) -> Result<RandomReference> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = RandomReference {
        system_ee: 0.0,
        mean_pdr: 0.0,
        feasible_fraction: 0.0,
        min_ee: 0.0,
    };
    for _ in 0..draws {
        let r = model.evaluate(&baselines::assign_random(model.num_eds(), &mut rng), pdr_threshold)?;
        acc.system_ee += r.system_ee;
        acc.mean_pdr += r.mean_pdr();
        acc.feasible_fraction += r.feasible_fraction();
        acc.min_ee += r.min_ee();
    }
    let d = draws.max(1) as f64;
    Ok(RandomReference {
        system_ee: acc.system_ee / d,
        mean_pdr: acc.mean_pdr / d,
        feasible_fraction: acc.feasible_fraction / d,
        min_ee: acc.min_ee / d,
    })
}

pub fn checkpoint_file(variant: Variant, seed: u64) -> String {
    format!("checkpoint_{}_seed{seed}.json", variant.name())
}

pub fn policy_file(variant: Variant, seed: u64) -> String {
    format!("policy_{}_seed{seed}.json", variant.name())
}

/// Result of training one variant over the configured seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub variant: Variant,
    pub outcomes: Vec<(u64, TrainOutcome)>,
    pub random: RandomReference,
    pub summary: Vec<SeedSummaryRow>,
}

impl TrainResult {
    pub fn final_system_ee(&self) -> Vec<f64> {
        self.outcomes.iter().map(|(_, o)| o.final_eval.system_ee).collect()
    }
}

fn worker_count(jobs: usize) -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs)
        .max(1)
}

/// Trains one seed; resumes from its checkpoint when asked and one exists.
fn train_seed(
    cfg: &ExperimentConfig,
    model: Arc<NetworkModel>,
    variant: Variant,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<(TrainOutcome, PolicySnapshot)> {
    let ckpt = dir.join(checkpoint_file(variant, seed));
    let mut trainer = if resume && ckpt.exists() {
        let mut t = Trainer::load(model, &ckpt)?;
        t.set_total_steps(cfg.train.total_steps)?;
        t
    } else {
        Trainer::new(
            model,
            cfg.env,
            cfg.learner_for(variant),
            cfg.train.train_config(),
            seed,
        )?
    };
    let every = cfg.train.checkpoint_interval;
    let outcome = trainer.run((every > 0).then_some((ckpt.as_path(), every)))?;
    if every > 0 {
        trainer.save(&ckpt)?;
    }
    Ok((outcome, trainer.policy()))
}

/// Runs `variant` for every configured seed and writes curves, aggregate,
/// per-seed summary, policies and gates.
pub fn train(
    cfg: &ExperimentConfig,
    sink: &OutputSink,
    variant: Variant,
    resume: bool,
) -> Result<(TrainResult, PipelineReport)> {
    let model = Arc::new(cfg.model(cfg.topology.num_eds)?);
    let random = random_reference(&model, cfg.train.random_draws, cfg.env.pdr_threshold, cfg.seed)?;
    let seeds = cfg.train.seeds.clone();

    // Seeds are independent; run them on worker threads and keep seed order.
    let workers = worker_count(seeds.len());
    let mut results: Vec<Option<Result<(TrainOutcome, PolicySnapshot)>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(seeds.len().div_ceil(workers)).collect();
        let mut start = 0;
        for chunk in chunks {
            let mine = &seeds[start..start + chunk.len()];
            start += chunk.len();
            let model = model.clone();
            scope.spawn(move || {
                for (slot, &seed) in chunk.iter_mut().zip(mine) {
                    *slot = Some(train_seed(cfg, model.clone(), variant, seed, sink.dir(), resume));
                }
            });
        }
    });

    let mut report = PipelineReport::default();
    let mut outcomes = Vec::with_capacity(seeds.len());
    let mut summary = Vec::with_capacity(seeds.len());
    for (&seed, slot) in seeds.iter().zip(results) {
        let (outcome, policy) = slot.expect("every seed ran")?;
        let path = sink.path(&policy_file(variant, seed));
        policy.save(&path)?;
        report.files.push(path);
        let mut curve: Vec<CurveRow> = outcome.log.initial.iter().map(CurveRow::from).collect();
        curve.extend(outcome.log.evals.iter().map(CurveRow::from));
        report.files.extend(sink.write_table(
            &format!("train_{}_seed{seed}", variant.name()),
            "train_curve",
            &curve,
        )?);
        report.files.extend(sink.write_table(
            &format!("train_{}_episodes_seed{seed}", variant.name()),
            "train_episodes",
            &outcome.log.episodes,
        )?);
        summary.push(SeedSummaryRow {
            variant: variant.name().to_string(),
            seed,
            initial_system_ee: outcome.initial.system_ee,
            final_system_ee: outcome.final_eval.system_ee,
            final_mean_pdr: outcome.final_eval.mean_pdr,
            final_feasible_fraction: outcome.final_eval.feasible_fraction,
            random_mean_system_ee: random.system_ee,
            ratio_vs_random: outcome.final_eval.system_ee / random.system_ee,
        });
        outcomes.push((seed, outcome));
    }

    let aggregate = aggregate_curves(&outcomes);
    report.files.extend(sink.write_table(
        &format!("train_{}_aggregate", variant.name()),
        "train_aggregate",
        &aggregate,
    )?);
    report.files.extend(sink.write_table(
        &format!("train_{}_summary", variant.name()),
        "train_summary",
        &summary,
    )?);

    let finals: Vec<f64> = summary.iter().map(|r| r.final_system_ee).collect();
    let initials: Vec<f64> = summary.iter().map(|r| r.initial_system_ee).collect();
    let feasible: Vec<f64> = summary.iter().map(|r| r.final_feasible_fraction).collect();
    check_finite("training", &finals)?;
    let med_final = median(&finals);
    report.gates.push(GateRow::at_least(
        "median_final_vs_random_ratio",
        med_final / random.system_ee,
        cfg.train.min_ratio_vs_random,
        true,
    ));
    let med_initial = median(&initials);
    report.gates.push(GateRow {
        gate: "median_final_exceeds_initial".into(),
        value: med_final,
        threshold: med_initial,
        pass: med_final > med_initial,
        gating: true,
    });
    report.gates.push(GateRow::at_least(
        "median_final_feasible_fraction",
        median(&feasible),
        cfg.train.min_feasible_fraction,
        true,
    ));
    let (trend, worst_drop) = smoothed_trend(&aggregate);
    report.gates.push(GateRow {
        gate: "median_curve_nondecreasing_smoothed".into(),
        value: worst_drop,
        threshold: 0.0,
        pass: trend,
        gating: false,
    });
    let result = TrainResult {
        variant,
        outcomes,
        random,
        summary,
    };
    Ok((result, report.finish(sink, &format!("train_{}_gates", variant.name()))?))
}

fn aggregate_curves(outcomes: &[(u64, TrainOutcome)]) -> Vec<AggregateRow> {
    let curves: Vec<Vec<&EvalRow>> = outcomes
        .iter()
        .map(|(_, o)| o.log.initial.iter().chain(&o.log.evals).collect())
        .collect();
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let ee: Vec<f64> = curves.iter().map(|c| c[k].system_ee).collect();
            let feas: Vec<f64> = curves.iter().map(|c| c[k].feasible_fraction).collect();
            let s = Summary::of(&ee);
            let ci = s.ci95();
            AggregateRow {
                step: curves[0][k].step,
                seeds: ee.len(),
                system_ee_mean: s.mean,
                system_ee_median: median(&ee),
                system_ee_ci95_low: ci.map(|c| c.0),
                system_ee_ci95_high: ci.map(|c| c.1),
                feasible_fraction_mean: feas.iter().sum::<f64>() / feas.len() as f64,
            }
        })
        .collect()
}

/// Trailing three-point mean of the median curve (learning part only):
/// whether it never decreases, and the largest decrease.
fn smoothed_trend(aggregate: &[AggregateRow]) -> (bool, f64) {
    let values: Vec<f64> = aggregate.iter().skip(1).map(|r| r.system_ee_median).collect();
    let smooth: Vec<f64> = (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(2);
            values[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect();
    let worst = smooth.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    (worst <= 0.0, worst)
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub seed: u64,
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub feasible_fraction: f64,
    pub min_ee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummaryRow {
    pub policy: String,
    pub seeds: usize,
    pub system_ee_mean: f64,
    pub system_ee_std: Option<f64>,
    pub system_ee_median: f64,
    pub mean_pdr_mean: f64,
    pub mean_pdr_std: Option<f64>,
    pub feasible_fraction_mean: f64,
}

fn compare_row(policy: &str, seed: u64, report: &EeReport) -> CompareRow {
    CompareRow {
        policy: policy.to_string(),
        seed,
        system_ee: report.system_ee,
        mean_pdr: report.mean_pdr(),
        feasible_fraction: report.feasible_fraction(),
        min_ee: report.min_ee(),
    }
}

fn eval_compare_row(policy: &str, seed: u64, e: &EvalRow) -> CompareRow {
    CompareRow {
        policy: policy.to_string(),
        seed,
        system_ee: e.system_ee,
        mean_pdr: e.mean_pdr,
        feasible_fraction: e.feasible_fraction,
        min_ee: e.min_ee,
    }
}

/// Trained policy for `seed`, from `dir` or (for the uniform ablation when
/// absent) trained on the spot.
fn policy_for(
    cfg: &ExperimentConfig,
    model: &Arc<NetworkModel>,
    variant: Variant,
    seed: u64,
    dir: &Path,
    sink: &OutputSink,
) -> Result<PolicySnapshot> {
    let path = dir.join(policy_file(variant, seed));
    if path.exists() {
        return PolicySnapshot::load(&path);
    }
    if variant == Variant::Malora {
        return Err(Error::Checkpoint(format!(
            "missing trained policy {}; run `train` first",
            path.display()
        )));
    }
    let (_, policy) = train_seed(cfg, model.clone(), variant, seed, sink.dir(), false)?;
    policy.save(&sink.path(&policy_file(variant, seed)))?;
    Ok(policy)
}

/// Evaluates trained policies and every configured baseline on the same
/// topology for each seed.
pub fn compare(cfg: &ExperimentConfig, sink: &OutputSink, policy_dir: &Path) -> Result<(Vec<CompareRow>, PipelineReport)> {
    let model = Arc::new(cfg.model(cfg.topology.num_eds)?);
    let th = cfg.env.pdr_threshold;
    let params = cfg.compare.params();
    let mut rows = Vec::new();
    let mut fixed: Vec<(BaselineTag, EeReport)> = Vec::new();
    for &tag in &cfg.compare.baselines {
        if matches!(tag, BaselineTag::MinSfMaxTp | BaselineTag::AdrLike | BaselineTag::MaxminGreedy) {
            let a = baselines::assign(tag, &model, &params, th, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            fixed.push((tag, model.evaluate(&a, th)?));
        }
    }
    for &seed in &cfg.train.seeds {
        let malora = policy_for(cfg, &model, Variant::Malora, seed, policy_dir, sink)?;
        rows.push(eval_compare_row("malora", seed, &malora.evaluate(model.clone())?));
        for &tag in &cfg.compare.baselines {
            match tag {
                BaselineTag::Random => {
                    let r = random_reference(&model, cfg.compare.random_draws, th, seed)?;
                    rows.push(CompareRow {
                        policy: tag.name().into(),
                        seed,
                        system_ee: r.system_ee,
                        mean_pdr: r.mean_pdr,
                        feasible_fraction: r.feasible_fraction,
                        min_ee: r.min_ee,
                    });
                }
                BaselineTag::MaloraU => {
                    let p = policy_for(cfg, &model, Variant::MaloraU, seed, policy_dir, sink)?;
                    rows.push(eval_compare_row(tag.name(), seed, &p.evaluate(model.clone())?));
                }
                _ => {
                    let (_, report) = fixed.iter().find(|(t, _)| *t == tag).expect("evaluated above");
                    rows.push(compare_row(tag.name(), seed, report));
                }
            }
        }
    }
    check_finite("comparison", &rows.iter().map(|r| r.system_ee).collect::<Vec<_>>())?;

    let mut policies: Vec<String> = vec!["malora".into()];
    policies.extend(cfg.compare.baselines.iter().map(|t| t.name().to_string()));
    let summary: Vec<CompareSummaryRow> = policies
        .iter()
        .map(|p| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| &r.policy == p).collect();
            let ee: Vec<f64> = mine.iter().map(|r| r.system_ee).collect();
            let pdr: Vec<f64> = mine.iter().map(|r| r.mean_pdr).collect();
            let s_ee = Summary::of(&ee);
            let s_pdr = Summary::of(&pdr);
            CompareSummaryRow {
                policy: p.clone(),
                seeds: mine.len(),
                system_ee_mean: s_ee.mean,
                system_ee_std: s_ee.std_dev,
                system_ee_median: median(&ee),
                mean_pdr_mean: s_pdr.mean,
                mean_pdr_std: s_pdr.std_dev,
                feasible_fraction_mean: mine.iter().map(|r| r.feasible_fraction).sum::<f64>() / mine.len().max(1) as f64,
            }
        })
        .collect();

    let mut report = PipelineReport::default();
    report.files.extend(sink.write_table("compare", "compare", &rows)?);
    report.files.extend(sink.write_table("compare_summary", "compare_summary", &summary)?);

    let ee_of = |policy: &str| -> Vec<f64> { rows.iter().filter(|r| r.policy == policy).map(|r| r.system_ee).collect() };
    let malora = ee_of("malora");
    let has_random = cfg.compare.baselines.contains(&BaselineTag::Random);
    report.gates.push(GateRow {
        gate: "random_baseline_present".into(),
        value: f64::from(u8::from(has_random)),
        threshold: 1.0,
        pass: has_random,
        gating: true,
    });
    if has_random {
        let random = ee_of("random");
        let ratio = median(&malora) / (random.iter().sum::<f64>() / random.len() as f64);
        report.gates.push(GateRow::at_least(
            "malora_median_vs_random_ratio",
            ratio,
            cfg.train.min_ratio_vs_random,
            true,
        ));
    }
    if cfg.compare.baselines.contains(&BaselineTag::MaloraU) {
        let wins = malora.iter().zip(ee_of("malora_u")).filter(|(m, u)| **m >= *u).count();
        let needed = malora.len() / 2 + 1;
        report.gates.push(GateRow::at_least("malora_ge_malora_u_seeds", wins as f64, needed as f64, true));
    }
    if cfg.compare.baselines.contains(&BaselineTag::MaxminGreedy) {
        report.gates.push(GateRow::at_least(
            "malora_median_minus_maxmin_greedy",
            median(&malora) - median(&ee_of("maxmin_greedy")),
            0.0,
            false,
        ));
    }
    Ok((rows, report.finish(sink, "compare_gates")?))
}

// ------------------------------------------------------ evaluate / baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub ed: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub channel: u32,
    pub sf: u8,
    pub tp_dbm: i32,
    pub pdr: f64,
    pub ee: f64,
    pub feasible: bool,
    pub sim_pdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummaryRow {
    pub policy: String,
    pub num_eds: usize,
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub feasible_fraction: f64,
    pub min_ee: f64,
    pub sim_mean_pdr: Option<f64>,
    pub mae_vs_sim: Option<f64>,
}

/// Per-device table and summary for one assignment, optionally checked
/// against the simulator.
pub fn report_assignment(
    cfg: &ExperimentConfig,
    sink: &OutputSink,
    model: &NetworkModel,
    assignment: &Assignment,
    policy: &str,
    with_sim: bool,
) -> Result<(AssignmentSummaryRow, PipelineReport)> {
    let report = model.evaluate(assignment, cfg.env.pdr_threshold)?;
    let sim = if with_sim {
        Some(simulate(model, assignment, &pipeline_sim_config(cfg))?)
    } else {
        None
    };
    let devices: Vec<DeviceRow> = (0..model.num_eds())
        .map(|i| DeviceRow {
            ed: i,
            x_m: model.topology.ed_positions[i].x,
            y_m: model.topology.ed_positions[i].y,
            channel: model.topology.channel_of_ed[i],
            sf: assignment.sf[i].value(),
            tp_dbm: assignment.tp[i].dbm(),
            pdr: report.pdr_per_ed[i],
            ee: report.ee_per_ed[i],
            feasible: report.pdr_per_ed[i] >= cfg.env.pdr_threshold,
            sim_pdr: sim.as_ref().map(|s| s.pdr_per_ed[i]),
        })
        .collect();
    check_finite("evaluation", &report.ee_per_ed)?;
    let mae = match &sim {
        Some(s) => Some(crate::sim::mae(s, &report)?),
        None => None,
    };
    let summary = AssignmentSummaryRow {
        policy: policy.to_string(),
        num_eds: model.num_eds(),
        system_ee: report.system_ee,
        mean_pdr: report.mean_pdr(),
        feasible_fraction: report.feasible_fraction(),
        min_ee: report.min_ee(),
        sim_mean_pdr: sim
            .as_ref()
            .map(|s| s.pdr_per_ed.iter().sum::<f64>() / s.pdr_per_ed.len().max(1) as f64),
        mae_vs_sim: mae,
    };
    let mut out = PipelineReport::default();
    out.files.extend(sink.write_table(&format!("{policy}_devices"), "devices", &devices)?);
    out.files
        .extend(sink.write_table(&format!("{policy}_summary"), "assignment_summary", std::slice::from_ref(&summary))?);
    if let Some(m) = mae {
        out.gates.push(GateRow::at_most("mae_vs_sim", m, cfg.validate.mae_tolerance));
    }
    Ok((summary, out))
}

/// Reads an `ed,sf,tp_dbm` CSV (extra columns ignored) into an assignment.
pub fn read_assignment_csv(path: &Path, num_eds: usize) -> Result<Assignment> {
    #[derive(Deserialize)]
    struct Row {
        ed: usize,
        sf: u8,
        tp_dbm: i32,
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut a = Assignment::uniform(num_eds, crate::radio::SpreadingFactor::MAX, crate::radio::TxPower::MAX);
    let mut seen = vec![false; num_eds];
    for row in reader.deserialize() {
        let r: Row = row?;
        if r.ed >= num_eds {
            return Err(Error::InvalidConfig(format!("assignment names device {} of {num_eds}", r.ed)));
        }
        a.sf[r.ed] = crate::radio::SpreadingFactor::new(r.sf)?;
        a.tp[r.ed] = crate::radio::TxPower::new(r.tp_dbm)?;
        seen[r.ed] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidConfig(format!("assignment has no row for device {missing}")));
    }
    Ok(a)
}

/// What `evaluate` scores.
#[derive(Debug, Clone)]
pub enum EvaluationTarget {
    /// Greedy rollout of a trained policy file.
    Policy(PathBuf),
    /// Fixed assignment from a CSV file.
    Assignment(PathBuf),
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    sink: &OutputSink,
    target: &EvaluationTarget,
    with_sim: bool,
) -> Result<(AssignmentSummaryRow, PipelineReport)> {
    let model = Arc::new(cfg.model(cfg.topology.num_eds)?);
    let assignment = match target {
        EvaluationTarget::Policy(path) => {
            let (_, actions) = PolicySnapshot::load(path)?.rollout(model.clone())?;
            Assignment::from_actions(&actions)?
        }
        EvaluationTarget::Assignment(path) => read_assignment_csv(path, model.num_eds())?,
    };
    let (summary, report) = report_assignment(cfg, sink, &model, &assignment, "evaluate", with_sim)?;
    Ok((summary, report.finish(sink, "evaluate_gates")?))
}

/// One baseline on the configured topology. The learned ablation is trained
/// with the global seed and evaluated greedily.
pub fn baseline(
    cfg: &ExperimentConfig,
    sink: &OutputSink,
    tag: BaselineTag,
    with_sim: bool,
) -> Result<(AssignmentSummaryRow, PipelineReport)> {
    let model = Arc::new(cfg.model(cfg.topology.num_eds)?);
    let assignment = if tag.is_learned() {
        let (_, policy) = train_seed(cfg, model.clone(), Variant::MaloraU, cfg.seed, sink.dir(), false)?;
        let (_, actions) = policy.rollout(model.clone())?;
        Assignment::from_actions(&actions)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        baselines::assign(tag, &model, &cfg.compare.params(), cfg.env.pdr_threshold, &mut rng)?
    };
    let name = format!("baseline_{}", tag.name());
    let (summary, report) = report_assignment(cfg, sink, &model, &assignment, &name, with_sim)?;
    Ok((summary, report.finish(sink, &format!("{name}_gates"))?))
}

/// Decodes an action list for display.
pub fn describe_actions(actions: &[usize]) -> Result<Vec<String>> {
    actions
        .iter()
        .map(|&a| decode_action(a).map(|(sf, tp)| format!("{sf}/{}dBm", tp.dbm())))
        .collect()
}
