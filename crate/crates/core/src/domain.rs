//! Core records shared by the simulator, snapshotting, training and evaluation.
//!
//! Timestamps and durations are integer seconds on a simulation-local epoch.
//! Features are categorical: one local id per field, mapped into a single
//! global id space by [`FeatureSchema`] so one embedding table serves every
//! field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since the simulation epoch.
pub type Timestamp = i64;
/// A span of time in seconds.
pub type Duration = i64;
pub type SampleId = u64;

pub const DAY: Duration = 86_400;
pub const HOUR: Duration = 3_600;

/// Converts (possibly fractional) days to whole seconds.
pub fn days(d: f64) -> Duration {
    (d * DAY as f64).round() as Duration
}

/// Vocabulary sizes per field and the derived global offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    vocab_sizes: Vec<u32>,
    offsets: Vec<u32>,
}

impl FeatureSchema {
    pub fn new(vocab_sizes: Vec<u32>) -> Result<Self> {
        if vocab_sizes.is_empty() {
            return Err(Error::config("feature schema needs at least one field"));
        }
        if vocab_sizes.contains(&0) {
            return Err(Error::config("every field vocabulary must be non-empty"));
        }
        let mut offsets = Vec::with_capacity(vocab_sizes.len());
        let mut acc = 0u32;
        for &v in &vocab_sizes {
            offsets.push(acc);
            acc = acc
                .checked_add(v)
                .ok_or_else(|| Error::config("total vocabulary overflows u32"))?;
        }
        Ok(Self {
            vocab_sizes,
            offsets,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[u32] {
        &self.vocab_sizes
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn num_categories(&self) -> usize {
        self.vocab_sizes.iter().map(|&v| v as usize).sum()
    }

    /// Checks arity and per-field range of a local feature tuple.
    pub fn check(&self, features: &[u32]) -> Result<()> {
        if features.len() != self.num_fields() {
            return Err(Error::input(format!(
                "expected {} feature fields, got {}",
                self.num_fields(),
                features.len()
            )));
        }
        for (field, (&id, &vocab)) in features.iter().zip(&self.vocab_sizes).enumerate() {
            if id >= vocab {
                return Err(Error::input(format!(
                    "feature id {id} out of vocabulary for field {field} (size {vocab})"
                )));
            }
        }
        Ok(())
    }

    /// Global embedding row for `local` in `field`.
    #[inline]
    pub fn global_id(&self, field: usize, local: u32) -> usize {
        (self.offsets[field] + local) as usize
    }
}

/// One logged click together with its eventual conversion, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub id: SampleId,
    pub features: Vec<u32>,
    pub cts: Timestamp,
    pub cvt: Option<Timestamp>,
}

impl ClickEvent {
    /// Click-to-conversion delay, when the click converted.
    pub fn delay(&self) -> Option<Duration> {
        self.cvt.map(|cvt| cvt - self.cts)
    }

    /// True conversion label under attribution window `w_a`.
    pub fn converts_within(&self, w_a: Duration) -> bool {
        self.delay().is_some_and(|d| d < w_a)
    }
}

/// A click as seen at collection time `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub id: SampleId,
    pub features: Vec<u32>,
    /// Conversion observed before `T` inside the attribution window.
    pub v: bool,
    /// Elapsed time `T - cts`.
    pub e: Duration,
    pub cts: Timestamp,
    /// Retained only when `v` holds.
    pub cvt: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub id: SampleId,
    pub c: bool,
}

/// Training record for the label-correction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcSample {
    pub id: SampleId,
    pub features: Vec<u32>,
    /// Elapsed time at the counterfactual deadline.
    pub e_cd: Duration,
    pub w: f64,
}

/// A single invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub id: SampleId,
    pub rule: &'static str,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub mod rules {
    pub const E_POSITIVE: &str = "e > 0";
    pub const E_MATCHES_T: &str = "e = T - cts";
    pub const V_REQUIRES_CVT: &str = "v=1 requires cvt";
    pub const CVT_REQUIRES_V: &str = "v=0 forbids cvt";
    pub const CVT_AFTER_CTS: &str = "cvt > cts";
    pub const CVT_BEFORE_T: &str = "cvt <= T";
    pub const CVT_IN_WINDOW: &str = "cvt - cts < w_a";
    pub const FEATURES: &str = "features within schema";
    pub const DUPLICATE_ID: &str = "unique id";
}

/// Checks every observed-sample invariant and reports, per sample id, each
/// rule that fails. Never errors.
pub fn validate_dataset(
    samples: &[ObservedSample],
    t: Timestamp,
    w_a: Duration,
    schema: &FeatureSchema,
) -> ValidationReport {
    let mut report = ValidationReport {
        checked: samples.len(),
        violations: Vec::new(),
    };
    let mut seen = std::collections::HashSet::with_capacity(samples.len());
    for s in samples {
        let mut fail = |rule| report.violations.push(Violation { id: s.id, rule });
        if !seen.insert(s.id) {
            fail(rules::DUPLICATE_ID);
        }
        if s.e <= 0 {
            fail(rules::E_POSITIVE);
        }
        if s.e != t - s.cts {
            fail(rules::E_MATCHES_T);
        }
        if schema.check(&s.features).is_err() {
            fail(rules::FEATURES);
        }
        match (s.v, s.cvt) {
            (true, None) => fail(rules::V_REQUIRES_CVT),
            (false, Some(_)) => fail(rules::CVT_REQUIRES_V),
            (true, Some(cvt)) => {
                if cvt <= s.cts {
                    fail(rules::CVT_AFTER_CTS);
                }
                if cvt > t {
                    fail(rules::CVT_BEFORE_T);
                }
                if cvt - s.cts >= w_a {
                    fail(rules::CVT_IN_WINDOW);
                }
            }
            (false, None) => {}
        }
    }
    report
}
