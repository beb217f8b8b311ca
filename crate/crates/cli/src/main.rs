use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use delayfb_core::config::ExperimentConfig;
use delayfb_core::experiment::{self, ModelKind};
use delayfb_core::{checkpoint, io, snapshot, validate_dataset, Error};

/// Delayed-feedback CVR experiments on synthetic click logs.
///
/// Log verbosity follows the DELAYFB_LOG environment variable
/// (error, warn, info, debug, trace).
#[derive(Debug, Parser)]
#[command(name = "delayfb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Experiment config file (flat `key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Vanilla,
    Oracle,
    Ulc,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Vanilla => ModelKind::Vanilla,
            ModelArg::Oracle => ModelKind::Oracle,
            ModelArg::Ulc => ModelKind::Ulc,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a click log and its oracle labels.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Observe a click log at the collection time and build LC data.
    Snapshot {
        #[command(flatten)]
        common: Common,
        /// Directory holding clicks.csv and oracle.csv.
        #[arg(long)]
        data: PathBuf,
        /// Counterfactual deadline offset in days; defaults to the config.
        #[arg(long = "tau-days")]
        tau_days: Option<f64>,
    },
    /// Train a CVR model on a snapshot.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the snapshot (and oracle.csv for the oracle model).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
    },
    /// Score a checkpoint on the test days of a click log.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding clicks.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full comparison across models and seeds.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Number of run seeds; defaults to the config.
        #[arg(long)]
        seeds: Option<usize>,
        /// Models to run; defaults to all three.
        #[arg(long, value_enum, value_delimiter = ',')]
        model: Vec<ModelArg>,
    },
    /// ULC performance and labeling recall across counterfactual deadlines.
    SweepTau {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated offsets in days.
        #[arg(long = "tau-days", value_delimiter = ',', required = true)]
        tau_days: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Snapshot { .. } => "snapshot",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Experiment { .. } => "experiment",
            Command::SweepTau { .. } => "sweep-tau",
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    files: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
}

/// Input problem detected by the CLI itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Input(_) | Error::Csv(_)) => 2,
        _ => 3,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn input(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(UsageError(format!("missing input file {}", path.display())).into());
    }
    Ok(path)
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    Ok(&common.out)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(dir: &Path, manifest: &Manifest<'_>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_text(dir, "manifest.json", &text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let (events, labels) = experiment::simulate(&cfg, cfg.seed)?;
            let k = cfg.field_vocab.len();
            io::write_click_log(io::create_file(&out.join("clicks.csv"))?, &events, k)?;
            io::write_oracle_labels(io::create_file(&out.join("oracle.csv"))?, &labels)?;
            log::info!("simulated {} clicks", events.len());
            write_manifest(
                out,
                &Manifest {
                    command: "simulate",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files: vec!["clicks.csv", "oracle.csv"],
                    details: Some(serde_json::json!({
                        "clicks": events.len(),
                        "conversions": labels.iter().filter(|l| l.c).count(),
                        "mean_delay_days": experiment::mean_delay_days(&events),
                    })),
                },
            )
        }
        Command::Snapshot { common, data, tau_days } => {
            let mut cfg = load_config(&common)?;
            if let Some(tau) = tau_days {
                cfg.tau_days = tau;
                cfg.validate()?;
            }
            let events = io::read_click_log(io::open_file(&input(&data, "clicks.csv")?)?)?;
            let oracle = io::read_oracle_labels(io::open_file(&input(&data, "oracle.csv")?)?)?;
            let out = out_dir(&common)?;
            let (train, valid) = experiment::split_observed(&cfg, &events);
            let lc = experiment::lc_data(&cfg, &train)?;
            let k = cfg.field_vocab.len();
            io::write_observed(io::create_file(&out.join("train.csv"))?, &train, k)?;
            io::write_observed(io::create_file(&out.join("valid.csv"))?, &valid, k)?;
            io::write_lc_data(io::create_file(&out.join("lc.csv"))?, &lc, k)?;
            write_manifest(
                out,
                &Manifest {
                    command: "snapshot",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files: vec!["train.csv", "valid.csv", "lc.csv"],
                    details: Some(serde_json::json!({
                        "tau_days": cfg.tau_days,
                        "train": train.len(),
                        "valid": valid.len(),
                        "lc_records": lc.len(),
                        "labeling_recall": snapshot::labeling_recall(&lc, &oracle)?,
                    })),
                },
            )
        }
        Command::Train { common, data, model } => {
            let cfg = load_config(&common)?;
            let schema = delayfb_core::FeatureSchema::new(cfg.field_vocab.clone())?;
            let train = io::read_observed(io::open_file(&input(&data, "train.csv")?)?)?;
            let valid = io::read_observed(io::open_file(&input(&data, "valid.csv")?)?)?;
            for (name, set) in [("train.csv", &train), ("valid.csv", &valid)] {
                let report = validate_dataset(set, cfg.snapshot_time(), cfg.w_a(), &schema);
                if !report.passed() {
                    let first = &report.violations[0];
                    return Err(UsageError(format!(
                        "{name}: {} violations, first: sample {} breaks `{}`",
                        report.violations.len(),
                        first.id,
                        first.rule
                    ))
                    .into());
                }
            }
            let out = out_dir(&common)?;
            let kind = ModelKind::from(model);
            let (files, traces) = match kind {
                ModelKind::Ulc => {
                    let lc = io::read_lc_data(io::open_file(&input(&data, "lc.csv")?)?)?;
                    let alt = experiment::train_ulc(&cfg, &schema, &train, &valid, &lc, cfg.seed)?;
                    checkpoint::save(&out.join("cvr.ckpt"), &alt.cvr)?;
                    checkpoint::save(&out.join("lc.ckpt"), alt.final_lc())?;
                    let traces: Vec<_> = alt
                        .rounds
                        .iter()
                        .map(|r| serde_json::json!({"round": r.round, "lc": r.lc_trace, "cvr": r.cvr_trace}))
                        .collect();
                    (vec!["cvr.ckpt", "lc.ckpt"], serde_json::Value::from(traces))
                }
                _ => {
                    let oracle = if kind == ModelKind::Oracle {
                        io::read_oracle_labels(io::open_file(&input(&data, "oracle.csv")?)?)?
                    } else {
                        Vec::new()
                    };
                    let (params, trace) =
                        experiment::train_baseline(&cfg, &schema, &train, &valid, &oracle, kind, cfg.seed)?;
                    checkpoint::save(&out.join("cvr.ckpt"), &params)?;
                    (vec!["cvr.ckpt"], serde_json::to_value(trace)?)
                }
            };
            write_manifest(
                out,
                &Manifest {
                    command: "train",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files,
                    details: Some(serde_json::json!({"model": kind, "traces": traces})),
                },
            )
        }
        Command::Evaluate {
            common,
            data,
            checkpoint: ckpt,
        } => {
            let cfg = load_config(&common)?;
            if !ckpt.is_file() {
                return Err(UsageError(format!("missing checkpoint {}", ckpt.display())).into());
            }
            let model = checkpoint::load(&ckpt)?;
            if model.has_elapsed_input() {
                return Err(UsageError("checkpoint is an LC model, not a CVR model".into()).into());
            }
            let events = io::read_click_log(io::open_file(&input(&data, "clicks.csv")?)?)?;
            let test = experiment::test_set(&cfg, &events);
            let report = experiment::evaluate_model(&model, &test, cfg.delay_groups)?;
            let out = out_dir(&common)?;
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            write_text(out, "metrics.json", &text)?;
            println!("auc {:.6} prauc {:.6} ll {:.6}", report.auc, report.prauc, report.ll);
            write_manifest(
                out,
                &Manifest {
                    command: "evaluate",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files: vec!["metrics.json"],
                    details: Some(serde_json::json!({"test_clicks": test.len()})),
                },
            )
        }
        Command::Experiment { common, seeds, model } => {
            let cfg = load_config(&common)?;
            let models: Vec<ModelKind> = if model.is_empty() {
                ModelKind::ALL.to_vec()
            } else {
                model.into_iter().map(ModelKind::from).collect()
            };
            let run_seeds = experiment::run_seeds(&cfg, seeds.unwrap_or(cfg.seeds));
            let report = experiment::run_experiment(&cfg, &models, &run_seeds)?;
            let out = out_dir(&common)?;
            write_text(out, "report.json", &report.to_json())?;
            write_text(out, "report.csv", &report.to_csv())?;
            for s in &report.summary {
                println!(
                    "{:<8} auc {:.4} ± {:.4}  prauc {:.4}  ll {:.4}{}",
                    s.model.name(),
                    s.auc_mean,
                    s.auc_std,
                    s.prauc_mean,
                    s.ll_mean,
                    s.ri_auc.map(|r| format!("  ri-auc {r:.4}")).unwrap_or_default()
                );
            }
            write_manifest(
                out,
                &Manifest {
                    command: "experiment",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files: vec!["report.json", "report.csv"],
                    details: None,
                },
            )
        }
        Command::SweepTau {
            common,
            seeds,
            tau_days,
        } => {
            let cfg = load_config(&common)?;
            let run_seeds = experiment::run_seeds(&cfg, seeds.unwrap_or(cfg.seeds));
            let report = experiment::sweep_tau(&cfg, &tau_days, &run_seeds)?;
            let out = out_dir(&common)?;
            write_text(out, "sweep.json", &report.to_json())?;
            write_text(out, "sweep.csv", &report.to_csv())?;
            for p in &report.points {
                println!(
                    "tau {:>4} seed {:>4}  recall {:.4}  auc {:.4}",
                    p.tau_days, p.seed, p.labeling_recall, p.metrics.auc
                );
            }
            write_manifest(
                out,
                &Manifest {
                    command: "sweep-tau",
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    files: vec!["sweep.json", "sweep.csv"],
                    details: None,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DELAYFB_LOG", "warn")).init();
    let cli = Cli::parse();
    let stage = cli.command.name();
    match run(cli).with_context(|| format!("stage `{stage}` failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
