//! Synthetic delayed-feedback click logs with known ground truth.
//!
//! Each context is a distinct feature tuple with its own conversion rate
//! and delay rate. Because the generating process is known, every oracle
//! quantity (true conversion probability, probability of being observed by
//! a deadline, ideal label-correction weight) has a closed form here.
//!
//! Delays are drawn in continuous seconds and recorded as
//! `max(1, ceil(delay))`, so for integer `t >= 1` the recorded delay
//! satisfies `P(delay <= t) = F(t)` for the continuous CDF `F`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::domain::{ClickEvent, Duration, FeatureSchema, OracleLabel, Timestamp};
use crate::error::{Error, Result};

/// Deterministic RNG for one named stream derived from a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DelayLaw {
    Exponential,
    /// With probability `slow_weight` the delay rate is divided by
    /// `slow_factor`; otherwise the context rate is used as is.
    Mixture { slow_weight: f64, slow_factor: f64 },
}

impl DelayLaw {
    /// Continuous CDF of the delay at `t` seconds for a context with `rate`.
    pub fn cdf(&self, rate: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let exp_cdf = |r: f64| -(-r * t).exp_m1();
        match *self {
            DelayLaw::Exponential => exp_cdf(rate),
            DelayLaw::Mixture {
                slow_weight,
                slow_factor,
            } => (1.0 - slow_weight) * exp_cdf(rate) + slow_weight * exp_cdf(rate / slow_factor),
        }
    }

    fn sample<R: Rng>(&self, rate: f64, rng: &mut R) -> f64 {
        let r = match *self {
            DelayLaw::Exponential => rate,
            DelayLaw::Mixture {
                slow_weight,
                slow_factor,
            } => {
                if rng.random::<f64>() < slow_weight {
                    rate / slow_factor
                } else {
                    rate
                }
            }
        };
        Exp::new(r).expect("positive rate").sample(rng)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DelayLaw::Exponential => Ok(()),
            DelayLaw::Mixture {
                slow_weight,
                slow_factor,
            } => {
                if !(0.0..=1.0).contains(&slow_weight) || slow_factor.is_nan() || slow_factor <= 0.0 {
                    Err(Error::config("mixture needs slow_weight in [0,1] and slow_factor > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub features: Vec<u32>,
    pub base_cvr: f64,
    /// Delay rate per second.
    pub delay_rate: f64,
}

/// Linear drift of the context distribution: weights stay at their start
/// value until `ramp_start`, then move linearly to `end_weights` at `ramp_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub end_weights: Vec<f64>,
    pub ramp_start: Timestamp,
    pub ramp_end: Timestamp,
}

impl Drift {
    /// Mixing coefficient toward the end weights at time `t`.
    pub fn alpha(&self, t: Timestamp) -> f64 {
        if t <= self.ramp_start {
            0.0
        } else if t >= self.ramp_end {
            1.0
        } else {
            (t - self.ramp_start) as f64 / (self.ramp_end - self.ramp_start) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWorld {
    pub schema: FeatureSchema,
    pub contexts: Vec<Context>,
    pub context_weights: Vec<f64>,
    pub w_a: Duration,
    pub delay_law: DelayLaw,
    pub drift: Option<Drift>,
}

fn check_distribution(weights: &[f64], n: usize, what: &str) -> Result<()> {
    if weights.len() != n {
        return Err(Error::config(format!("{what} has {} entries, expected {n}", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::config(format!("{what} must be finite and nonnegative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

impl GroundTruthWorld {
    /// Validating constructor. Conversion rates may sit on the closed unit
    /// interval so limit cases (never / always converting) are expressible.
    pub fn new(
        schema: FeatureSchema,
        contexts: Vec<Context>,
        context_weights: Vec<f64>,
        w_a: Duration,
        delay_law: DelayLaw,
        drift: Option<Drift>,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::config("world needs at least one context"));
        }
        if w_a <= 0 {
            return Err(Error::config("attribution window must be positive"));
        }
        delay_law.validate()?;
        check_distribution(&context_weights, contexts.len(), "context_weights")?;
        let mut seen = std::collections::HashSet::new();
        for ctx in &contexts {
            schema.check(&ctx.features).map_err(|e| Error::config(e.to_string()))?;
            if !seen.insert(ctx.features.clone()) {
                return Err(Error::config("contexts must have distinct feature tuples"));
            }
            if !(0.0..=1.0).contains(&ctx.base_cvr) {
                return Err(Error::config(format!("base_cvr {} outside [0,1]", ctx.base_cvr)));
            }
            if !(ctx.delay_rate > 0.0 && ctx.delay_rate.is_finite()) {
                return Err(Error::config("delay rate must be positive and finite"));
            }
        }
        if let Some(d) = &drift {
            check_distribution(&d.end_weights, contexts.len(), "drift end weights")?;
            if d.ramp_end <= d.ramp_start {
                return Err(Error::config("drift ramp must end after it starts"));
            }
        }
        Ok(Self {
            schema,
            contexts,
            context_weights,
            w_a,
            delay_law,
            drift,
        })
    }

    /// P(recorded delay <= t) for integer seconds `t`.
    pub fn delay_cdf(&self, ctx: usize, t: Duration) -> f64 {
        if t < 1 {
            0.0
        } else {
            self.delay_law.cdf(self.contexts[ctx].delay_rate, t as f64)
        }
    }

    /// P(c = 1 | x): converts with a delay strictly inside the window.
    pub fn conversion_prob(&self, ctx: usize) -> f64 {
        self.contexts[ctx].base_cvr * self.delay_cdf(ctx, self.w_a - 1)
    }

    /// P(v = 1 | x, e): conversion recorded within `e` and within the window.
    pub fn observed_prob(&self, ctx: usize, e: Duration) -> f64 {
        self.contexts[ctx].base_cvr * self.delay_cdf(ctx, e.min(self.w_a - 1))
    }

    /// Closed-form ideal label-correction weight P(c = 1 | x, e, v = 0).
    pub fn ideal_lc_weight(&self, ctx: usize, e: Duration) -> f64 {
        let p_final = self.conversion_prob(ctx);
        let p_seen = self.observed_prob(ctx, e);
        let denom = 1.0 - p_seen;
        if denom <= 0.0 {
            0.0
        } else {
            (p_final - p_seen) / denom
        }
    }

    /// Context distribution in force at time `t`.
    pub fn weights_at(&self, t: Timestamp) -> Vec<f64> {
        match &self.drift {
            None => self.context_weights.clone(),
            Some(d) => {
                let a = d.alpha(t);
                self.context_weights
                    .iter()
                    .zip(&d.end_weights)
                    .map(|(s, e)| (1.0 - a) * s + a * e)
                    .collect()
            }
        }
    }

    /// Index of the context with a given feature tuple.
    pub fn context_of(&self, features: &[u32]) -> Option<usize> {
        self.contexts.iter().position(|c| c.features == features)
    }
}

/// Parameters for [`build_world`]. Intervals are closed; `delay_range` is a
/// range of delay rates per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub field_vocab: Vec<u32>,
    pub num_contexts: usize,
    pub cvr_range: (f64, f64),
    pub delay_range: (f64, f64),
    pub delay_law: DelayLaw,
    pub w_a: Duration,
    pub drift: Option<DriftSpec>,
}

/// A fraction of contexts is absent at the start and grows to a given share
/// of traffic by `ramp_end`. Emerging contexts own a reserved range of the
/// first field's values and have their mean delay scaled by
/// `emerging_delay_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub emerging_fraction: f64,
    pub emerging_mass: f64,
    pub emerging_delay_factor: f64,
    pub ramp_start: Timestamp,
    pub ramp_end: Timestamp,
}

pub fn build_world(spec: &WorldSpec, seed: u64) -> Result<GroundTruthWorld> {
    let (cvr_lo, cvr_hi) = spec.cvr_range;
    if !(cvr_lo > 0.0 && cvr_hi < 1.0 && cvr_lo <= cvr_hi) {
        return Err(Error::config(format!(
            "cvr_range [{cvr_lo}, {cvr_hi}] must be a subinterval of (0,1)"
        )));
    }
    let (rate_lo, rate_hi) = spec.delay_range;
    if !(rate_lo > 0.0 && rate_lo <= rate_hi && rate_hi.is_finite()) {
        return Err(Error::config(format!(
            "delay_range [{rate_lo}, {rate_hi}] must be a positive interval"
        )));
    }
    if spec.num_contexts == 0 {
        return Err(Error::config("num_contexts must be positive"));
    }
    let schema = FeatureSchema::new(spec.field_vocab.clone())?;
    let capacity: f64 = spec.field_vocab.iter().map(|&v| v as f64).product();
    if (spec.num_contexts as f64) > capacity {
        return Err(Error::config(format!(
            "{} contexts requested but only {capacity} distinct feature tuples exist",
            spec.num_contexts
        )));
    }

    let (n_emerging, reserved, slow) = match &spec.drift {
        None => (0, 0, 1.0),
        Some(d) => {
            if !(0.0..1.0).contains(&d.emerging_fraction) || !(0.0..1.0).contains(&d.emerging_mass) {
                return Err(Error::config("emerging_fraction and emerging_mass must lie in [0,1)"));
            }
            if !(d.emerging_delay_factor > 0.0 && d.emerging_delay_factor.is_finite()) {
                return Err(Error::config("emerging_delay_factor must be positive"));
            }
            let n = ((spec.num_contexts as f64) * d.emerging_fraction).round() as usize;
            let v0 = spec.field_vocab[0];
            let r = ((v0 as f64) * d.emerging_fraction).ceil() as u32;
            if n > 0 && (r == 0 || r >= v0) {
                return Err(Error::config("first field needs values for both old and emerging contexts"));
            }
            let rest = capacity / v0 as f64;
            if n as f64 > r as f64 * rest || (spec.num_contexts - n) as f64 > (v0 - r) as f64 * rest {
                return Err(Error::config("too many contexts for the emerging/old feature split"));
            }
            (n, if n > 0 { r } else { 0 }, d.emerging_delay_factor)
        }
    };

    // Emerging contexts take the top `reserved` values of the first field, so
    // their first feature never occurs before the drift starts.
    let first_vocab = spec.field_vocab[0];
    let mut rng = stream_rng(seed, 0x5eed_0001);
    let mut seen = std::collections::HashSet::new();
    let mut contexts = Vec::with_capacity(spec.num_contexts);
    while contexts.len() < spec.num_contexts {
        let emerging = contexts.len() < n_emerging;
        let mut features: Vec<u32> = spec.field_vocab.iter().map(|&v| rng.random_range(0..v)).collect();
        features[0] = if emerging {
            rng.random_range(first_vocab - reserved..first_vocab)
        } else {
            rng.random_range(0..first_vocab - reserved)
        };
        if !seen.insert(features.clone()) {
            continue;
        }
        let base_cvr = cvr_lo + (cvr_hi - cvr_lo) * rng.random::<f64>();
        // Log-uniform in the rate: delays are a scale quantity.
        let u: f64 = rng.random();
        let mut delay_rate = (rate_lo.ln() + (rate_hi.ln() - rate_lo.ln()) * u).exp();
        if emerging {
            delay_rate /= slow;
        }
        contexts.push(Context {
            features,
            base_cvr,
            delay_rate,
        });
    }

    let exp1 = Exp::new(1.0).expect("rate 1");
    let raw: Vec<f64> = (0..spec.num_contexts).map(|_| exp1.sample(&mut rng) + 1e-3).collect();

    let (start, drift) = match &spec.drift {
        None => (normalize(raw), None),
        Some(d) => {
            let mask = |want: bool| -> Vec<f64> {
                raw.iter()
                    .enumerate()
                    .map(|(i, &w)| if (i < n_emerging) == want { w } else { 0.0 })
                    .collect()
            };
            let old = normalize(mask(false));
            let end = if n_emerging == 0 {
                old.clone()
            } else {
                let new = normalize(mask(true));
                old.iter()
                    .zip(&new)
                    .map(|(o, n)| (1.0 - d.emerging_mass) * o + d.emerging_mass * n)
                    .collect()
            };
            (
                old,
                Some(Drift {
                    end_weights: end,
                    ramp_start: d.ramp_start,
                    ramp_end: d.ramp_end,
                }),
            )
        }
    };

    GroundTruthWorld::new(schema, contexts, start, spec.w_a, spec.delay_law, drift)
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Draws `n_clicks` clicks uniformly over `[0, span)`, ids assigned in
/// click-time order, plus the matching oracle labels.
pub fn simulate_log(
    world: &GroundTruthWorld,
    n_clicks: usize,
    span: Duration,
    seed: u64,
) -> Result<(Vec<ClickEvent>, Vec<OracleLabel>)> {
    if span <= 0 {
        return Err(Error::config("span must be positive"));
    }
    let mut rng = stream_rng(seed, 0x5eed_0002);
    let mut cts: Vec<Timestamp> = (0..n_clicks).map(|_| rng.random_range(0..span)).collect();
    cts.sort_unstable();

    let static_index = WeightedIndex::new(&world.context_weights)
        .map_err(|e| Error::config(format!("context weights: {e}")))?;
    let end_index = match &world.drift {
        Some(d) => Some(
            WeightedIndex::new(&d.end_weights)
                .map_err(|e| Error::config(format!("drift weights: {e}")))?,
        ),
        None => None,
    };

    let mut events = Vec::with_capacity(n_clicks);
    let mut labels = Vec::with_capacity(n_clicks);
    for (i, &t) in cts.iter().enumerate() {
        // Linear interpolation of two distributions is a two-way mixture.
        let ctx_idx = match (&world.drift, &end_index) {
            (Some(d), Some(end)) if rng.random::<f64>() < d.alpha(t) => end.sample(&mut rng),
            _ => static_index.sample(&mut rng),
        };
        let ctx = &world.contexts[ctx_idx];
        let mut cvt = None;
        let mut c = false;
        if rng.random::<f64>() < ctx.base_cvr {
            let raw = world.delay_law.sample(ctx.delay_rate, &mut rng);
            let delay = (raw.ceil() as Duration).max(1);
            if delay < world.w_a {
                cvt = Some(t + delay);
                c = true;
            }
        }
        let id = i as u64;
        events.push(ClickEvent {
            id,
            features: ctx.features.clone(),
            cts: t,
            cvt,
        });
        labels.push(OracleLabel { id, c });
    }
    Ok((events, labels))
}
