//! End-to-end pipeline: simulate, snapshot, train, evaluate, report.
//!
//! A benchmark world is fixed by the config seed. Each run seed draws its own
//! click log from that world and seeds every training step, so a run is a
//! pure function of `(config, run seed)`.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::domain::{ClickEvent, Duration, FeatureSchema, LcSample, ObservedSample, OracleLabel, DAY};
use crate::error::{Error, Result};
use crate::logsim::{build_world, simulate_log, stream_rng, GroundTruthWorld};
use crate::metrics::{self, mean_std, Metrics, MetricsReport};
use crate::nnet::ModelParams;
use crate::snapshot::{counterfactual_label, labeling_recall, observe};
use crate::trainer::{alternative_train, train_model, AltData, AltOutput, TrainSet, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vanilla,
    Oracle,
    Ulc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Vanilla, ModelKind::Oracle, ModelKind::Ulc];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vanilla => "vanilla",
            ModelKind::Oracle => "oracle",
            ModelKind::Ulc => "ulc",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ModelKind::Vanilla),
            "oracle" => Ok(ModelKind::Oracle),
            "ulc" => Ok(ModelKind::Ulc),
            other => Err(Error::config(format!("unknown model {other:?}"))),
        }
    }
}

/// Test clicks with their true labels.
#[derive(Debug, Clone, Default)]
pub struct TestSet {
    pub features: Vec<Vec<u32>>,
    pub labels: Vec<bool>,
    pub delays: Vec<Option<Duration>>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Everything the trainers need for one run seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub schema: FeatureSchema,
    pub events: Vec<ClickEvent>,
    pub oracle: Vec<OracleLabel>,
    pub train: Vec<ObservedSample>,
    pub valid: Vec<ObservedSample>,
    pub test: TestSet,
}

pub fn world(cfg: &ExperimentConfig) -> Result<GroundTruthWorld> {
    build_world(&cfg.world_spec()?, cfg.seed)
}

pub fn simulate(cfg: &ExperimentConfig, run_seed: u64) -> Result<(Vec<ClickEvent>, Vec<OracleLabel>)> {
    simulate_log(&world(cfg)?, cfg.n_clicks, cfg.span(), run_seed)
}

/// Observed training and validation data at the collection time.
pub fn split_observed(cfg: &ExperimentConfig, events: &[ClickEvent]) -> (Vec<ObservedSample>, Vec<ObservedSample>) {
    let observed = observe(events, cfg.snapshot_time(), cfg.w_a());
    observed.into_iter().partition(|s| s.cts < cfg.train_end())
}

/// Clicks after the collection time, labelled from the complete log.
pub fn test_set(cfg: &ExperimentConfig, events: &[ClickEvent]) -> TestSet {
    let w_a = cfg.w_a();
    let mut test = TestSet::default();
    for ev in events.iter().filter(|ev| ev.cts >= cfg.snapshot_time()) {
        let c = ev.converts_within(w_a);
        test.features.push(ev.features.clone());
        test.labels.push(c);
        test.delays.push(if c { ev.delay() } else { None });
    }
    test
}

pub fn prepare_from_log(
    cfg: &ExperimentConfig,
    schema: FeatureSchema,
    events: Vec<ClickEvent>,
    oracle: Vec<OracleLabel>,
) -> Result<Prepared> {
    let (train, valid) = split_observed(cfg, &events);
    let test = test_set(cfg, &events);
    for (name, empty) in [("training", train.is_empty()), ("validation", valid.is_empty()), ("test", test.is_empty())] {
        if empty {
            return Err(Error::Data(format!("{name} split is empty")));
        }
    }
    Ok(Prepared {
        schema,
        events,
        oracle,
        train,
        valid,
        test,
    })
}

pub fn prepare(cfg: &ExperimentConfig, run_seed: u64) -> Result<Prepared> {
    let world = world(cfg)?;
    let (events, oracle) = simulate_log(&world, cfg.n_clicks, cfg.span(), run_seed)?;
    prepare_from_log(cfg, world.schema, events, oracle)
}

fn true_labels(samples: &[ObservedSample], oracle: &[OracleLabel]) -> Result<Vec<f64>> {
    let by_id: std::collections::HashMap<u64, bool> = oracle.iter().map(|l| (l.id, l.c)).collect();
    samples
        .iter()
        .map(|s| match by_id.get(&s.id) {
            Some(&c) => Ok(if c { 1.0 } else { 0.0 }),
            None => Err(Error::Data(format!("no oracle label for sample {}", s.id))),
        })
        .collect()
}

fn observed_labels(samples: &[ObservedSample]) -> Vec<f64> {
    samples.iter().map(|s| if s.v { 1.0 } else { 0.0 }).collect()
}

/// Trains the vanilla or oracle baseline.
pub fn train_baseline(
    cfg: &ExperimentConfig,
    schema: &FeatureSchema,
    train: &[ObservedSample],
    valid: &[ObservedSample],
    oracle: &[OracleLabel],
    kind: ModelKind,
    run_seed: u64,
) -> Result<(ModelParams, TrainTrace)> {
    let (yt, yv) = match kind {
        ModelKind::Vanilla => (observed_labels(train), observed_labels(valid)),
        ModelKind::Oracle => (true_labels(train, oracle)?, true_labels(valid, oracle)?),
        ModelKind::Ulc => return Err(Error::config("ulc is trained with alternative training")),
    };
    let init = ModelParams::init(schema, &cfg.cvr_shape(), &mut stream_rng(run_seed, 1))?;
    train_model(
        init,
        &TrainSet::from_observed(train, &yt, false)?,
        &TrainSet::from_observed(valid, &yv, false)?,
        &cfg.train_options(run_seed),
    )
}

pub fn lc_data(cfg: &ExperimentConfig, train: &[ObservedSample]) -> Result<Vec<LcSample>> {
    counterfactual_label(train, cfg.snapshot_time(), cfg.tau())
}

pub fn train_ulc(
    cfg: &ExperimentConfig,
    schema: &FeatureSchema,
    train: &[ObservedSample],
    valid: &[ObservedSample],
    lc_data: &[LcSample],
    run_seed: u64,
) -> Result<AltOutput> {
    alternative_train(
        AltData {
            schema,
            train,
            valid,
            lc_data,
        },
        &cfg.alt_config(run_seed),
    )
}

/// Overall and per-delay-group metrics of `model` on the test set.
pub fn evaluate_model(model: &ModelParams, test: &TestSet, k: usize) -> Result<MetricsReport> {
    let scores = model.predict_batch(test.features.iter().map(|f| (f.as_slice(), None)))?;
    let mut report = MetricsReport::from_metrics(metrics::evaluate(&scores, &test.labels)?);
    report.per_group = metrics::delay_stratified_eval(&scores, &test.labels, &test.delays, k)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub seed: u64,
    pub metrics: MetricsReport,
    /// Per-delay-group quality of the final LC model on training negatives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lc_groups: Option<Vec<Metrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeling_recall: Option<f64>,
    pub best_epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: ModelKind,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub prauc_mean: f64,
    pub prauc_std: f64,
    pub ll_mean: f64,
    pub ll_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_prauc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_ll: Option<f64>,
    /// Mean AUC per delay group.
    pub group_auc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub run_seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<Summary>,
}

impl ExperimentReport {
    pub fn runs_of(&self, model: ModelKind) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.model == model)
    }

    pub fn summary_of(&self, model: ModelKind) -> Option<&Summary> {
        self.summary.iter().find(|s| s.model == model)
    }

    pub fn aucs(&self, model: ModelKind) -> Vec<f64> {
        self.runs_of(model).map(|r| r.metrics.auc).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per run: model, seed, metrics and relative improvements.
    pub fn to_csv(&self) -> String {
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("model,seed,auc,prauc,ll,ri_auc,ri_prauc,ri_ll\n");
        for r in &self.runs {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.model.name(),
                r.seed,
                m.auc,
                m.prauc,
                m.ll,
                fmt(m.ri_auc),
                fmt(m.ri_prauc),
                fmt(m.ri_ll)
            ));
        }
        out
    }
}

pub fn run_seeds(cfg: &ExperimentConfig, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
}

/// Trains and evaluates one model on prepared data.
pub fn run_model(cfg: &ExperimentConfig, data: &Prepared, kind: ModelKind, run_seed: u64) -> Result<RunRecord> {
    log::info!("seed {run_seed}: training {}", kind.name());
    match kind {
        ModelKind::Vanilla | ModelKind::Oracle => {
            let (model, trace) =
                train_baseline(cfg, &data.schema, &data.train, &data.valid, &data.oracle, kind, run_seed)?;
            Ok(RunRecord {
                model: kind,
                seed: run_seed,
                metrics: evaluate_model(&model, &data.test, cfg.delay_groups)?,
                lc_groups: None,
                labeling_recall: None,
                best_epochs: vec![trace.best_epoch],
            })
        }
        ModelKind::Ulc => {
            let lc = lc_data(cfg, &data.train)?;
            let out = train_ulc(cfg, &data.schema, &data.train, &data.valid, &lc, run_seed)?;
            let lc_groups =
                metrics::lc_delay_eval(out.final_lc(), &data.train, &data.events, cfg.w_a(), cfg.delay_groups)?;
            Ok(RunRecord {
                model: kind,
                seed: run_seed,
                metrics: evaluate_model(&out.cvr, &data.test, cfg.delay_groups)?,
                lc_groups: Some(lc_groups),
                labeling_recall: Some(labeling_recall(&lc, &data.oracle)?),
                best_epochs: out
                    .rounds
                    .iter()
                    .flat_map(|r| [r.lc_trace.best_epoch, r.cvr_trace.best_epoch])
                    .collect(),
            })
        }
    }
}

fn attach_ri(runs: &mut [RunRecord]) -> Result<()> {
    let reference: Vec<(u64, ModelKind, Metrics)> =
        runs.iter().map(|r| (r.seed, r.model, r.metrics.metrics())).collect();
    let find = |seed: u64, kind: ModelKind| {
        reference
            .iter()
            .find(|(s, k, _)| *s == seed && *k == kind)
            .map(|(_, _, m)| *m)
    };
    for r in runs.iter_mut() {
        if let (Some(v), Some(o)) = (find(r.seed, ModelKind::Vanilla), find(r.seed, ModelKind::Oracle)) {
            match r.metrics.clone().with_ri(&v, &o) {
                Ok(m) => r.metrics = m,
                Err(Error::MetricUndefined(msg)) => log::warn!("seed {}: {msg}", r.seed),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

fn summarize(runs: &[RunRecord], models: &[ModelKind]) -> Vec<Summary> {
    let mean = |xs: Vec<f64>| mean_std(&xs);
    models
        .iter()
        .map(|&model| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.model == model).collect();
            let col = |f: &dyn Fn(&MetricsReport) -> f64| mean(mine.iter().map(|r| f(&r.metrics)).collect());
            let ri = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
                let xs: Option<Vec<f64>> = mine.iter().map(|r| f(&r.metrics)).collect();
                xs.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
            };
            let (auc_mean, auc_std) = col(&|m| m.auc);
            let (prauc_mean, prauc_std) = col(&|m| m.prauc);
            let (ll_mean, ll_std) = col(&|m| m.ll);
            let groups = mine.first().map_or(0, |r| r.metrics.per_group.len());
            let group_auc = (0..groups)
                .map(|g| mean(mine.iter().map(|r| r.metrics.per_group[g].auc).collect()).0)
                .collect();
            Summary {
                model,
                auc_mean,
                auc_std,
                prauc_mean,
                prauc_std,
                ll_mean,
                ll_std,
                ri_auc: ri(&|m| m.ri_auc),
                ri_prauc: ri(&|m| m.ri_prauc),
                ri_ll: ri(&|m| m.ri_ll),
                group_auc,
            }
        })
        .collect()
}

/// Runs `models` for every seed in `seeds` and summarizes across seeds.
pub fn run_experiment(cfg: &ExperimentConfig, models: &[ModelKind], seeds: &[u64]) -> Result<ExperimentReport> {
    if models.is_empty() || seeds.is_empty() {
        return Err(Error::config("need at least one model and one seed"));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let data = prepare(cfg, seed)?;
        for &kind in models {
            runs.push(run_model(cfg, &data, kind, seed)?);
        }
    }
    attach_ri(&mut runs)?;
    Ok(ExperimentReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        run_seeds: seeds.to_vec(),
        summary: summarize(&runs, models),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau_days: f64,
    pub seed: u64,
    pub lc_records: usize,
    pub labeling_recall: f64,
    /// ULC test metrics, with RI against the same seed's baselines.
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSweepReport {
    pub config_hash: String,
    pub seed: u64,
    pub run_seeds: Vec<u64>,
    pub tau_days: Vec<f64>,
    /// Vanilla and oracle runs, one per seed; they do not depend on tau.
    pub baselines: Vec<RunRecord>,
    pub points: Vec<TauPoint>,
}

impl TauSweepReport {
    pub fn point(&self, tau_days: f64, seed: u64) -> Option<&TauPoint> {
        self.points.iter().find(|p| p.tau_days == tau_days && p.seed == seed)
    }

    /// Index into `tau_days` of the best ULC AUC for `seed`; the first wins ties.
    pub fn argmax(&self, seed: u64) -> Option<usize> {
        let aucs: Vec<f64> = self
            .tau_days
            .iter()
            .map(|&t| self.point(t, seed).map_or(f64::NEG_INFINITY, |p| p.metrics.auc))
            .collect();
        (0..aucs.len()).reduce(|best, i| if aucs[i] > aucs[best] { i } else { best })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("tau_days,seed,lc_records,labeling_recall,auc,prauc,ll,ri_auc,ri_prauc,ri_ll\n");
        for p in &self.points {
            let m = &p.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                p.tau_days,
                p.seed,
                p.lc_records,
                p.labeling_recall,
                m.auc,
                m.prauc,
                m.ll,
                fmt(m.ri_auc),
                fmt(m.ri_prauc),
                fmt(m.ri_ll)
            ));
        }
        out
    }
}

/// Trains ULC once per `(tau, seed)` pair, reusing each seed's click log and
/// baselines.
pub fn sweep_tau(cfg: &ExperimentConfig, tau_days: &[f64], seeds: &[u64]) -> Result<TauSweepReport> {
    if tau_days.is_empty() || seeds.is_empty() {
        return Err(Error::config("need at least one tau and one seed"));
    }
    let configs: Vec<ExperimentConfig> = tau_days
        .iter()
        .map(|&tau| {
            let c = ExperimentConfig {
                tau_days: tau,
                ..cfg.clone()
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let mut baselines = Vec::new();
    let mut points = Vec::new();
    for &seed in seeds {
        let data = prepare(cfg, seed)?;
        let vanilla = run_model(cfg, &data, ModelKind::Vanilla, seed)?;
        let oracle = run_model(cfg, &data, ModelKind::Oracle, seed)?;
        let (m_v, m_o) = (vanilla.metrics.metrics(), oracle.metrics.metrics());
        baselines.extend([vanilla, oracle]);
        for cfg_tau in &configs {
            log::info!("seed {seed}: tau {} days", cfg_tau.tau_days);
            let lc = lc_data(cfg_tau, &data.train)?;
            let out = train_ulc(cfg_tau, &data.schema, &data.train, &data.valid, &lc, seed)?;
            let scores = out
                .cvr
                .predict_batch(data.test.features.iter().map(|f| (f.as_slice(), None)))?;
            let base = MetricsReport::from_metrics(metrics::evaluate(&scores, &data.test.labels)?);
            let report = match base.clone().with_ri(&m_v, &m_o) {
                Ok(r) => r,
                Err(Error::MetricUndefined(msg)) => {
                    log::warn!("seed {seed}: {msg}");
                    base
                }
                Err(e) => return Err(e),
            };
            points.push(TauPoint {
                tau_days: cfg_tau.tau_days,
                seed,
                lc_records: lc.len(),
                labeling_recall: labeling_recall(&lc, &data.oracle)?,
                metrics: report,
            });
        }
    }
    Ok(TauSweepReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        run_seeds: seeds.to_vec(),
        tau_days: tau_days.to_vec(),
        baselines,
        points,
    })
}

/// Mean delay of converting clicks in days, used to describe a benchmark.
pub fn mean_delay_days(events: &[ClickEvent]) -> f64 {
    let delays: Vec<f64> = events.iter().filter_map(|e| e.delay()).map(|d| d as f64 / DAY as f64).collect();
    mean_std(&delays).0
}
