//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key listed in
//! [`ExperimentConfig::to_text`] is required, except the mixture keys (only
//! with `delay_law = mixture`) and the drift keys (only with `drift = true`).
//! Durations are given in days.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{days, Duration, Timestamp, DAY};
use crate::error::{Error, Result};
use crate::logsim::{DelayLaw, DriftSpec, WorldSpec};
use crate::nnet::ModelShape;
use crate::trainer::{AltConfig, Strategy, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub emerging_fraction: f64,
    pub emerging_mass: f64,
    pub emerging_delay_factor: f64,
    pub ramp_start_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: usize,
    // simulation
    pub n_clicks: usize,
    pub train_days: u32,
    pub valid_days: u32,
    pub test_days: u32,
    pub field_vocab: Vec<u32>,
    pub num_contexts: usize,
    pub cvr_min: f64,
    pub cvr_max: f64,
    pub delay_mean_min_days: f64,
    pub delay_mean_max_days: f64,
    pub delay_law: DelayLaw,
    pub drift: Option<DriftConfig>,
    // method
    pub w_a_days: f64,
    pub tau_days: f64,
    pub n_alt: usize,
    pub w_clip: f64,
    pub strategy: Option<Strategy>,
    pub strategy_threshold: f64,
    pub lc_holdout_fraction: f64,
    // optimization
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    // evaluation
    pub delay_groups: usize,
}

struct Fields {
    map: BTreeMap<String, (String, usize)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::config(format!("missing config key `{key}`")))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse().map_err(|_| {
            let line = self.map[key].1;
            Error::config(format!("line {line}: cannot parse `{key}` from {raw:?}"))
        })
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("cannot parse element {p:?} of `{key}`")))
            })
            .collect()
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::config(format!("`{key}` must be true or false, got {other:?}"))),
        }
    }
}

const REQUIRED: &[&str] = &[
    "seed",
    "seeds",
    "n_clicks",
    "train_days",
    "valid_days",
    "test_days",
    "field_vocab",
    "num_contexts",
    "cvr_min",
    "cvr_max",
    "delay_mean_min_days",
    "delay_mean_max_days",
    "delay_law",
    "drift",
    "w_a_days",
    "tau_days",
    "n_alt",
    "w_clip",
    "strategy",
    "strategy_threshold",
    "lc_holdout_fraction",
    "learning_rate",
    "l2_reg",
    "batch_size",
    "max_epochs",
    "early_stop_patience",
    "embedding_dim",
    "hidden_sizes",
    "delay_groups",
];

const MIXTURE_KEYS: &[&str] = &["mixture_slow_weight", "mixture_slow_factor"];
const DRIFT_KEYS: &[&str] = &[
    "drift_emerging_fraction",
    "drift_emerging_mass",
    "drift_emerging_delay_factor",
    "drift_ramp_start_day",
];

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().to_string();
            let known = REQUIRED.contains(&k.as_str())
                || MIXTURE_KEYS.contains(&k.as_str())
                || DRIFT_KEYS.contains(&k.as_str());
            if !known {
                return Err(Error::config(format!("line {}: unknown config key `{k}`", n + 1)));
            }
            if map.insert(k.clone(), (v.trim().to_string(), n + 1)).is_some() {
                return Err(Error::config(format!("line {}: duplicate config key `{k}`", n + 1)));
            }
        }
        let f = Fields { map };
        for key in REQUIRED {
            f.raw(key)?;
        }
        let delay_law = match f.raw("delay_law")? {
            "exponential" => DelayLaw::Exponential,
            "mixture" => DelayLaw::Mixture {
                slow_weight: f.get("mixture_slow_weight")?,
                slow_factor: f.get("mixture_slow_factor")?,
            },
            other => return Err(Error::config(format!("unknown delay_law {other:?}"))),
        };
        let drift = if f.bool("drift")? {
            Some(DriftConfig {
                emerging_fraction: f.get("drift_emerging_fraction")?,
                emerging_mass: f.get("drift_emerging_mass")?,
                emerging_delay_factor: f.get("drift_emerging_delay_factor")?,
                ramp_start_day: f.get("drift_ramp_start_day")?,
            })
        } else {
            None
        };
        let strategy = match f.raw("strategy")? {
            "none" => None,
            s => Some(s.parse()?),
        };
        let cfg = ExperimentConfig {
            seed: f.get("seed")?,
            seeds: f.get("seeds")?,
            n_clicks: f.get("n_clicks")?,
            train_days: f.get("train_days")?,
            valid_days: f.get("valid_days")?,
            test_days: f.get("test_days")?,
            field_vocab: f.list("field_vocab")?,
            num_contexts: f.get("num_contexts")?,
            cvr_min: f.get("cvr_min")?,
            cvr_max: f.get("cvr_max")?,
            delay_mean_min_days: f.get("delay_mean_min_days")?,
            delay_mean_max_days: f.get("delay_mean_max_days")?,
            delay_law,
            drift,
            w_a_days: f.get("w_a_days")?,
            tau_days: f.get("tau_days")?,
            n_alt: f.get("n_alt")?,
            w_clip: f.get("w_clip")?,
            strategy,
            strategy_threshold: f.get("strategy_threshold")?,
            lc_holdout_fraction: f.get("lc_holdout_fraction")?,
            learning_rate: f.get("learning_rate")?,
            l2_reg: f.get("l2_reg")?,
            batch_size: f.get("batch_size")?,
            max_epochs: f.get("max_epochs")?,
            early_stop_patience: f.get("early_stop_patience")?,
            embedding_dim: f.get("embedding_dim")?,
            hidden_sizes: f.list("hidden_sizes")?,
            delay_groups: f.get("delay_groups")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seeds", self.seeds > 0),
            ("train_days", self.train_days > 0),
            ("valid_days", self.valid_days > 0),
            ("test_days", self.test_days > 0),
            ("num_contexts", self.num_contexts > 0),
            ("batch_size", self.batch_size > 0),
            ("max_epochs", self.max_epochs > 0),
            ("embedding_dim", self.embedding_dim > 0),
            ("learning_rate", self.learning_rate > 0.0),
            ("w_a_days", self.w_a_days > 0.0),
            ("tau_days", self.tau_days > 0.0),
            ("l2_reg", self.l2_reg >= 0.0),
            ("hidden_sizes", self.hidden_sizes.iter().all(|&h| h > 0)),
            ("delay_groups", self.delay_groups > 0),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::config(format!("`{key}` is out of range")));
        }
        if !(0.5..1.0).contains(&self.w_clip) {
            return Err(Error::config("`w_clip` must lie in [0.5, 1)"));
        }
        if !(self.lc_holdout_fraction > 0.0 && self.lc_holdout_fraction < 1.0) {
            return Err(Error::config("`lc_holdout_fraction` must lie in (0, 1)"));
        }
        if self.strategy.is_some() && !(self.strategy_threshold > 0.0 && self.strategy_threshold <= 1.0) {
            return Err(Error::config("`strategy_threshold` must lie in (0, 1]"));
        }
        if self.tau_days >= self.train_days as f64 {
            return Err(Error::config(format!(
                "`tau_days` = {} must be shorter than the {}-day training span",
                self.tau_days, self.train_days
            )));
        }
        if !(self.cvr_min > 0.0 && self.cvr_max < 1.0 && self.cvr_min <= self.cvr_max) {
            return Err(Error::config("cvr range must be a subinterval of (0, 1)"));
        }
        if self.delay_mean_min_days <= 0.0 || self.delay_mean_min_days > self.delay_mean_max_days {
            return Err(Error::config("delay mean range must be a positive interval"));
        }
        self.world_spec()?;
        Ok(())
    }

    pub fn w_a(&self) -> Duration {
        days(self.w_a_days)
    }

    pub fn tau(&self) -> Duration {
        days(self.tau_days)
    }

    pub fn span(&self) -> Duration {
        (self.train_days + self.valid_days + self.test_days) as Duration * DAY
    }

    /// End of the training days.
    pub fn train_end(&self) -> Timestamp {
        self.train_days as Timestamp * DAY
    }

    /// Collection time: end of the validation days.
    pub fn snapshot_time(&self) -> Timestamp {
        (self.train_days + self.valid_days) as Timestamp * DAY
    }

    pub fn world_spec(&self) -> Result<WorldSpec> {
        if self.field_vocab.is_empty() {
            return Err(Error::config("`field_vocab` needs at least one field"));
        }
        let drift = self.drift.as_ref().map(|d| DriftSpec {
            emerging_fraction: d.emerging_fraction,
            emerging_mass: d.emerging_mass,
            emerging_delay_factor: d.emerging_delay_factor,
            ramp_start: days(d.ramp_start_day),
            ramp_end: self.span(),
        });
        if let Some(d) = &drift {
            if d.ramp_start < 0 || d.ramp_start >= d.ramp_end {
                return Err(Error::config("`drift_ramp_start_day` must fall inside the span"));
            }
        }
        Ok(WorldSpec {
            field_vocab: self.field_vocab.clone(),
            num_contexts: self.num_contexts,
            cvr_range: (self.cvr_min, self.cvr_max),
            delay_range: (
                1.0 / (self.delay_mean_max_days * DAY as f64),
                1.0 / (self.delay_mean_min_days * DAY as f64),
            ),
            delay_law: self.delay_law,
            w_a: self.w_a(),
            drift,
        })
    }

    pub fn cvr_shape(&self) -> ModelShape {
        ModelShape {
            embedding_dim: self.embedding_dim,
            hidden: self.hidden_sizes.clone(),
            elapsed_window: None,
        }
    }

    pub fn lc_shape(&self) -> ModelShape {
        ModelShape {
            elapsed_window: Some(self.w_a()),
            ..self.cvr_shape()
        }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            learning_rate: self.learning_rate,
            l2_reg: self.l2_reg,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.early_stop_patience,
            seed,
        }
    }

    pub fn alt_config(&self, seed: u64) -> AltConfig {
        AltConfig {
            cvr_shape: self.cvr_shape(),
            lc_shape: self.lc_shape(),
            train: self.train_options(seed),
            n_alt: self.n_alt,
            w_clip: self.w_clip,
            w_a: self.w_a(),
            lc_holdout_fraction: self.lc_holdout_fraction,
            strategy: self.strategy.map(|s| (s, self.strategy_threshold)),
        }
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("seed", self.seed.to_string());
        kv.insert("seeds", self.seeds.to_string());
        kv.insert("n_clicks", self.n_clicks.to_string());
        kv.insert("train_days", self.train_days.to_string());
        kv.insert("valid_days", self.valid_days.to_string());
        kv.insert("test_days", self.test_days.to_string());
        kv.insert("field_vocab", join(&self.field_vocab));
        kv.insert("num_contexts", self.num_contexts.to_string());
        kv.insert("cvr_min", self.cvr_min.to_string());
        kv.insert("cvr_max", self.cvr_max.to_string());
        kv.insert("delay_mean_min_days", self.delay_mean_min_days.to_string());
        kv.insert("delay_mean_max_days", self.delay_mean_max_days.to_string());
        match self.delay_law {
            DelayLaw::Exponential => {
                kv.insert("delay_law", "exponential".into());
            }
            DelayLaw::Mixture {
                slow_weight,
                slow_factor,
            } => {
                kv.insert("delay_law", "mixture".into());
                kv.insert("mixture_slow_weight", slow_weight.to_string());
                kv.insert("mixture_slow_factor", slow_factor.to_string());
            }
        }
        match &self.drift {
            None => {
                kv.insert("drift", "false".into());
            }
            Some(d) => {
                kv.insert("drift", "true".into());
                kv.insert("drift_emerging_fraction", d.emerging_fraction.to_string());
                kv.insert("drift_emerging_mass", d.emerging_mass.to_string());
                kv.insert("drift_emerging_delay_factor", d.emerging_delay_factor.to_string());
                kv.insert("drift_ramp_start_day", d.ramp_start_day.to_string());
            }
        }
        kv.insert("w_a_days", self.w_a_days.to_string());
        kv.insert("tau_days", self.tau_days.to_string());
        kv.insert("n_alt", self.n_alt.to_string());
        kv.insert("w_clip", self.w_clip.to_string());
        kv.insert(
            "strategy",
            match self.strategy {
                None => "none",
                Some(Strategy::Hard) => "hard",
                Some(Strategy::Soft) => "soft",
                Some(Strategy::Drop) => "drop",
            }
            .into(),
        );
        kv.insert("strategy_threshold", self.strategy_threshold.to_string());
        kv.insert("lc_holdout_fraction", self.lc_holdout_fraction.to_string());
        kv.insert("learning_rate", self.learning_rate.to_string());
        kv.insert("l2_reg", self.l2_reg.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("max_epochs", self.max_epochs.to_string());
        kv.insert("early_stop_patience", self.early_stop_patience.to_string());
        kv.insert("embedding_dim", self.embedding_dim.to_string());
        kv.insert("hidden_sizes", join(&self.hidden_sizes));
        kv.insert("delay_groups", self.delay_groups.to_string());
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
