use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use malora_core::baselines::BaselineTag;
use malora_core::config::{ExperimentConfig, Variant};
use malora_core::harness::{self, EvaluationTarget, GateRow, OutputSink, PipelineReport};

const OUT_DIR_ENV: &str = "MALORA_OUT_DIR";

/// LoRa SF/TP allocation: analytic model validation, multi-agent training and
/// baseline comparison.
#[derive(Debug, Parser)]
#[command(name = "malora", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Falls back to $MALORA_OUT_DIR, then the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set topology.num_eds=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Malora,
    MaloraU,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Malora => Variant::Malora,
            VariantArg::MaloraU => Variant::MaloraU,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic PDR against the Monte Carlo simulator over the size sweep.
    ValidateModel,
    /// Train one variant for every configured seed.
    Train {
        /// Defaults to `train.variant` from the config.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Continue from existing per-seed checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Trained policies against every configured baseline.
    Compare {
        /// Directory holding `policy_<variant>_seed<S>.json`; defaults to the
        /// output directory.
        #[arg(long)]
        policies: Option<PathBuf>,
    },
    /// Score a trained policy or a fixed assignment per device.
    Evaluate {
        #[arg(long, conflicts_with = "assignment", required_unless_present = "assignment")]
        policy: Option<PathBuf>,
        /// CSV with columns `ed,sf,tp_dbm`.
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Also run the simulator and report the MAE.
        #[arg(long)]
        sim: bool,
    },
    /// Run one baseline allocator.
    Baseline {
        #[arg(long)]
        tag: BaselineTag,
        #[arg(long)]
        sim: bool,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    ExperimentConfig::load_with_overrides(cli.config.as_deref(), &overrides).context("loading configuration")
}

fn print_gates(gates: &[GateRow]) {
    for g in gates {
        let status = if g.pass { "PASS" } else { "FAIL" };
        let kind = if g.gating { "" } else { " (informational)" };
        println!("{status} {}: value={:.6} threshold={:.6}{kind}", g.gate, g.value, g.threshold);
    }
}

fn run(cli: &Cli) -> anyhow::Result<PipelineReport> {
    let cfg = load_config(cli)?;
    let env_out = std::env::var(OUT_DIR_ENV).ok();
    let dir = cfg.resolve_output_dir(cli.out.as_deref(), env_out.as_deref());
    let sink = OutputSink::new(&dir, &cfg).with_context(|| format!("preparing {}", dir.display()))?;
    let report = match &cli.command {
        Command::ValidateModel => {
            let (rows, report) = harness::validate_model(&cfg, &sink)?;
            for r in rows {
                println!("N={} mae={:.5} packets={}", r.num_eds, r.mae_mean, r.packets_sent);
            }
            report
        }
        Command::Train { variant, resume } => {
            let variant = variant.map_or(cfg.train.variant, Variant::from);
            let (result, report) = harness::train(&cfg, &sink, variant, *resume)?;
            println!("random mean system EE {:.4}", result.random.system_ee);
            for r in &result.summary {
                println!(
                    "seed {}: initial {:.4} final {:.4} feasible {:.3}",
                    r.seed, r.initial_system_ee, r.final_system_ee, r.final_feasible_fraction
                );
            }
            report
        }
        Command::Compare { policies } => {
            let policy_dir = policies.clone().unwrap_or_else(|| dir.clone());
            let (rows, report) = harness::compare(&cfg, &sink, &policy_dir)?;
            for r in rows {
                println!("{} seed {}: system EE {:.4} mean PDR {:.4}", r.policy, r.seed, r.system_ee, r.mean_pdr);
            }
            report
        }
        Command::Evaluate { policy, assignment, sim } => {
            let target = match (policy, assignment) {
                (Some(p), _) => EvaluationTarget::Policy(p.clone()),
                (None, Some(a)) => EvaluationTarget::Assignment(a.clone()),
                (None, None) => anyhow::bail!("pass --policy or --assignment"),
            };
            let (summary, report) = harness::evaluate(&cfg, &sink, &target, *sim)?;
            println!(
                "system EE {:.4} mean PDR {:.4} feasible {:.3}",
                summary.system_ee, summary.mean_pdr, summary.feasible_fraction
            );
            report
        }
        Command::Baseline { tag, sim } => {
            let (summary, report) = harness::baseline(&cfg, &sink, *tag, *sim)?;
            println!(
                "{}: system EE {:.4} mean PDR {:.4} feasible {:.3}",
                tag, summary.system_ee, summary.mean_pdr, summary.feasible_fraction
            );
            report
        }
    };
    println!("wrote {} files to {}", report.files.len(), dir.display());
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print_gates(&report.gates);
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
