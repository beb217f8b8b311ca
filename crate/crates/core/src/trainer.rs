//! Mini-batch training with early stopping, and the alternating
//! LC-model / CVR-model procedure with embedding transfer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{Duration, LcSample, ObservedSample};
use crate::error::{Error, Result};
use crate::logsim::stream_rng;
use crate::losses::{lc_weights, soft_cross_entropy};
use crate::nnet::{adam_step, transfer_embeddings, Gradients, ModelParams, ModelShape, OptimizerState, Workspace};
use crate::domain::FeatureSchema;

/// Flattened training rows with soft cross-entropy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    num_fields: usize,
    features: Vec<u32>,
    elapsed: Option<Vec<Duration>>,
    targets: Vec<f64>,
}

impl TrainSet {
    pub fn new(
        num_fields: usize,
        rows: impl IntoIterator<Item = (Vec<u32>, Option<Duration>, f64)>,
        with_elapsed: bool,
    ) -> Result<Self> {
        let mut set = Self {
            num_fields,
            features: Vec::new(),
            elapsed: with_elapsed.then(Vec::new),
            targets: Vec::new(),
        };
        for (f, e, y) in rows {
            if f.len() != num_fields {
                return Err(Error::input("feature arity mismatch in training rows"));
            }
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::input(format!("target {y} outside [0,1]")));
            }
            set.features.extend_from_slice(&f);
            match (&mut set.elapsed, e) {
                (Some(el), Some(e)) => el.push(e),
                (None, None) => {}
                _ => return Err(Error::input("elapsed time present on some rows only")),
            }
            set.targets.push(y);
        }
        Ok(set)
    }

    /// Observed samples with per-sample soft targets.
    pub fn from_observed(samples: &[ObservedSample], targets: &[f64], with_elapsed: bool) -> Result<Self> {
        if samples.len() != targets.len() {
            return Err(Error::input("targets and samples differ in length"));
        }
        let k = samples.first().map_or(0, |s| s.features.len());
        Self::new(
            k,
            samples
                .iter()
                .zip(targets)
                .map(|(s, &y)| (s.features.clone(), with_elapsed.then_some(s.e), y)),
            with_elapsed,
        )
    }

    /// LC records, targets `w`, elapsed time taken at the counterfactual deadline.
    pub fn from_lc(samples: &[LcSample]) -> Result<Self> {
        let k = samples.first().map_or(0, |s| s.features.len());
        Self::new(
            k,
            samples.iter().map(|s| (s.features.clone(), Some(s.e_cd), s.w)),
            true,
        )
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], Option<Duration>, f64) {
        let f = &self.features[i * self.num_fields..(i + 1) * self.num_fields];
        (f, self.elapsed.as_ref().map(|e| e[i]), self.targets[i])
    }

    fn check_against(&self, params: &ModelParams) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.elapsed.is_some() != params.has_elapsed_input() {
            return Err(Error::input("training rows disagree with the model about elapsed input"));
        }
        for i in 0..self.len() {
            params.schema.check(self.row(i).0)?;
        }
        if let Some(e) = &self.elapsed {
            if e.iter().any(|&x| x < 0) {
                return Err(Error::input("negative elapsed time in training rows"));
            }
        }
        Ok(())
    }

    /// Mean cross-entropy of `params` against this set's targets.
    pub fn mean_loss(&self, params: &ModelParams) -> f64 {
        let mut ws = Workspace::default();
        let total: f64 = (0..self.len())
            .map(|i| {
                let (f, e, y) = self.row(i);
                soft_cross_entropy(params.forward_ws(f, e, &mut ws), y)
            })
            .sum();
        total / self.len() as f64
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self {
            num_fields: self.num_fields,
            features: Vec::with_capacity(idx.len() * self.num_fields),
            elapsed: self.elapsed.as_ref().map(|_| Vec::with_capacity(idx.len())),
            targets: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let (f, e, y) = self.row(i);
            out.features.extend_from_slice(f);
            if let (Some(el), Some(e)) = (&mut out.elapsed, e) {
                el.push(e);
            }
            out.targets.push(y);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: f64,
}

/// Trains `init` on `data` until the validation loss has not improved for
/// `patience` consecutive epochs (or `max_epochs` is reached), returning
/// the best-validation parameters.
pub fn train_model(
    init: ModelParams,
    data: &TrainSet,
    valid: &TrainSet,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::input("empty training set"));
    }
    if valid.is_empty() {
        return Err(Error::input("empty validation set"));
    }
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(Error::config("batch_size and max_epochs must be positive"));
    }
    data.check_against(&init)?;
    valid.check_against(&init)?;

    let mut params = init;
    let mut state = OptimizerState::new(&params);
    let mut grads = Gradients::zeros_like(&params);
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut best = params.clone();
    let mut best_valid = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0usize;
    let mut epochs = Vec::new();

    for epoch in 0..opts.max_epochs {
        let mut rng = stream_rng(opts.seed, 0x7a11_0000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            grads.clear();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (f, e, y) = data.row(i);
                let p = params.accumulate_grad(f, e, y, scale, &mut grads, &mut ws);
                train_total += soft_cross_entropy(p, y);
            }
            adam_step(&mut params, &grads, &mut state, opts.learning_rate, opts.l2_reg)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
        let train_loss = train_total / data.len() as f64;
        let valid_metric = valid.mean_loss(&params);
        if !train_loss.is_finite() || !valid_metric.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch} (train {train_loss}, valid {valid_metric})"
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} valid {valid_metric:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric,
        });
        if valid_metric < best_valid {
            best_valid = valid_metric;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > opts.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TrainTrace {
            epochs,
            best_epoch,
            best_valid,
        },
    ))
}

/// Ways of rewriting LC data with CVR predictions before retraining the LC model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Negatives predicted above the threshold become positives.
    Hard,
    /// Every negative takes the predicted CVR as its label.
    Soft,
    /// Negatives predicted above the threshold are removed.
    Drop,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Strategy::Hard),
            "soft" => Ok(Strategy::Soft),
            "drop" => Ok(Strategy::Drop),
            other => Err(Error::config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Applies a prediction-based strategy to the negatives (`w = 0`) of
/// `lc_data`; positives pass through untouched.
pub fn apply_strategy(
    lc_data: &[LcSample],
    cvr_model: &ModelParams,
    strategy: Strategy,
    threshold: f64,
) -> Result<Vec<LcSample>> {
    let mut out = Vec::with_capacity(lc_data.len());
    for s in lc_data {
        if s.w != 0.0 {
            out.push(s.clone());
            continue;
        }
        let f = cvr_model.forward(&s.features, None)?;
        match strategy {
            Strategy::Hard => out.push(LcSample {
                w: if f > threshold { 1.0 } else { 0.0 },
                ..s.clone()
            }),
            Strategy::Soft => out.push(LcSample { w: f, ..s.clone() }),
            Strategy::Drop => {
                if f <= threshold {
                    out.push(s.clone());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltConfig {
    pub cvr_shape: ModelShape,
    pub lc_shape: ModelShape,
    pub train: TrainOptions,
    pub n_alt: usize,
    pub w_clip: f64,
    pub w_a: Duration,
    pub lc_holdout_fraction: f64,
    pub strategy: Option<(Strategy, f64)>,
}

/// Inputs shared by every round of alternative training.
#[derive(Debug, Clone, Copy)]
pub struct AltData<'a> {
    pub schema: &'a FeatureSchema,
    pub train: &'a [ObservedSample],
    pub valid: &'a [ObservedSample],
    pub lc_data: &'a [LcSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCheckpoint {
    pub round: usize,
    /// LC model as initialized, after embedding transfer.
    pub lc_init: ModelParams,
    pub lc: ModelParams,
    pub cvr: ModelParams,
    pub lc_trace: TrainTrace,
    pub cvr_trace: TrainTrace,
    /// LC records after any prediction-based strategy.
    pub lc_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltOutput {
    pub cvr: ModelParams,
    pub rounds: Vec<RoundCheckpoint>,
}

impl AltOutput {
    pub fn final_lc(&self) -> &ModelParams {
        &self.rounds.last().expect("at least one round").lc
    }
}

fn round_seed(base: u64, round: usize, which: u64) -> u64 {
    base ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round as u64 + 1)).rotate_left(which as u32 * 8)
}

fn lc_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 0x1c_5711));
    let n_hold = ((n as f64) * fraction).round().clamp(1.0, (n - 1).max(1) as f64) as usize;
    let hold = idx[..n_hold].to_vec();
    let train = if n > 1 { idx[n_hold..].to_vec() } else { idx.clone() };
    (train, hold)
}

/// Targets `v + w (1 - v)` for the CVR model under the LC loss.
pub fn lc_targets(samples: &[ObservedSample], weights: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .zip(weights)
        .map(|(s, &w)| if s.v { 1.0 } else { w })
        .collect()
}

/// One round: fresh CVR model, LC model freshly initialized except for
/// the embeddings carried over from `prev_cvr`, LC fit on LC data, CVR fit
/// with the LC loss.
pub fn run_round(
    data: AltData<'_>,
    cfg: &AltConfig,
    round: usize,
    prev_cvr: Option<&ModelParams>,
) -> Result<RoundCheckpoint> {
    if data.lc_data.is_empty() {
        return Err(Error::config("LC training data is empty"));
    }
    let seed = cfg.train.seed;
    let cvr_init = ModelParams::init(data.schema, &cfg.cvr_shape, &mut stream_rng(round_seed(seed, round, 1), 1))?;
    let mut lc_init = ModelParams::init(data.schema, &cfg.lc_shape, &mut stream_rng(round_seed(seed, round, 2), 2))?;
    if let Some(prev) = prev_cvr {
        lc_init = transfer_embeddings(prev, &lc_init)?;
    }

    let records = match (cfg.strategy, prev_cvr) {
        (Some((strategy, thr)), Some(prev)) => apply_strategy(data.lc_data, prev, strategy, thr)?,
        _ => data.lc_data.to_vec(),
    };
    if records.is_empty() {
        return Err(Error::config("LC training data is empty after strategy"));
    }
    // The LC model only ever sees elapsed times up to the largest one in its data.
    let horizon = records.iter().map(|r| r.e_cd).max().unwrap_or(1).clamp(1, cfg.w_a);
    lc_init.set_elapsed_horizon(horizon)?;
    let lc_all = TrainSet::from_lc(&records)?;
    let (tr, hold) = lc_split(lc_all.len(), cfg.lc_holdout_fraction, round_seed(seed, round, 3));
    let lc_opts = TrainOptions {
        seed: round_seed(seed, round, 4),
        ..cfg.train.clone()
    };
    let (lc, lc_trace) = train_model(lc_init.clone(), &lc_all.subset(&tr), &lc_all.subset(&hold), &lc_opts)?;

    let w_train = lc_weights(&lc, data.train, cfg.w_clip, cfg.w_a)?;
    let w_valid = lc_weights(&lc, data.valid, cfg.w_clip, cfg.w_a)?;
    let train_set = TrainSet::from_observed(data.train, &lc_targets(data.train, &w_train), false)?;
    let valid_set = TrainSet::from_observed(data.valid, &lc_targets(data.valid, &w_valid), false)?;
    let cvr_opts = TrainOptions {
        seed: round_seed(seed, round, 5),
        ..cfg.train.clone()
    };
    let (cvr, cvr_trace) = train_model(cvr_init, &train_set, &valid_set, &cvr_opts)?;
    log::info!(
        "round {round}: lc best valid {:.5} (epoch {}), cvr best valid {:.5} (epoch {})",
        lc_trace.best_valid,
        lc_trace.best_epoch,
        cvr_trace.best_valid,
        cvr_trace.best_epoch
    );
    Ok(RoundCheckpoint {
        round,
        lc_init,
        lc,
        cvr,
        lc_trace,
        cvr_trace,
        lc_records: records.len(),
    })
}

/// Runs `n_alt + 1` rounds, transferring the CVR embeddings into the next
/// round's LC model.
pub fn alternative_train(data: AltData<'_>, cfg: &AltConfig) -> Result<AltOutput> {
    if data.lc_data.is_empty() {
        return Err(Error::config("LC training data is empty"));
    }
    let mut rounds: Vec<RoundCheckpoint> = Vec::with_capacity(cfg.n_alt + 1);
    for r in 0..=cfg.n_alt {
        let prev = rounds.last().map(|c| &c.cvr);
        let ck = run_round(data, cfg, r, prev)?;
        rounds.push(ck);
    }
    Ok(AltOutput {
        cvr: rounds.last().expect("one round").cvr.clone(),
        rounds,
    })
}
