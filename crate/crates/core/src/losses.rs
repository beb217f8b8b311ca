//! Cross-entropy objectives for the CVR and label-correction models.
//!
//! All losses are returned in their minimized (negated) form and averaged
//! over samples. Log arguments are clamped to `[1e-12, 1 - 1e-12]`.

use crate::domain::{Duration, ObservedSample};
use crate::error::{Error, Result};
use crate::nnet::ModelParams;

pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR)
}

/// Cross-entropy of one prediction against a soft target in [0,1].
#[inline]
pub fn soft_cross_entropy(f: f64, y: f64) -> f64 {
    let f = clamp(f);
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= y * f.ln();
    }
    if y != 1.0 {
        loss -= (1.0 - y) * (1.0 - f).ln();
    }
    loss
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::input("loss over an empty batch"));
    }
    if others.iter().any(|&m| m != n) {
        return Err(Error::input(format!("length mismatch: {n} predictions vs {others:?}")));
    }
    Ok(())
}

fn check_unit(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => Err(Error::input(format!("{what} value {x} outside [0,1]"))),
        None => Ok(()),
    }
}

fn mean_ce(predictions: &[f64], targets: impl Iterator<Item = f64>) -> f64 {
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&f, y)| soft_cross_entropy(f, y))
        .sum();
    total / predictions.len() as f64
}

fn bool_target(b: &bool) -> f64 {
    if *b {
        1.0
    } else {
        0.0
    }
}

/// Cross-entropy against true labels.
pub fn oracle_loss(predictions: &[f64], c: &[bool]) -> Result<f64> {
    check_lengths(predictions.len(), &[c.len()])?;
    Ok(mean_ce(predictions, c.iter().map(bool_target)))
}

/// Cross-entropy against observed labels.
pub fn vanilla_loss(predictions: &[f64], v: &[bool]) -> Result<f64> {
    oracle_loss(predictions, v)
}

/// Label-corrected loss: observed positives count as positives, and each
/// observed negative counts as positive with weight `w` and negative with
/// weight `1 - w`. `w` is ignored where `v` holds.
pub fn lc_loss(predictions: &[f64], v: &[bool], w: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), &[v.len(), w.len()])?;
    check_unit(w, "w")?;
    let total: f64 = predictions
        .iter()
        .zip(v)
        .zip(w)
        .map(|((&f, &v), &w)| {
            let f = clamp(f);
            if v {
                -f.ln()
            } else {
                -(w * f.ln() + (1.0 - w) * (1.0 - f).ln())
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Cross-entropy against fractional targets, used to fit the LC model.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), &[targets.len()])?;
    check_unit(targets, "target")?;
    Ok(mean_ce(predictions, targets.iter().copied()))
}

/// Correction weights for observed samples: the LC model's prediction,
/// capped at `w_clip`, for fresh negatives; zero for observed positives and
/// for negatives whose elapsed time already covers the attribution window.
pub fn lc_weights(
    lc_model: &ModelParams,
    samples: &[ObservedSample],
    w_clip: f64,
    w_a: Duration,
) -> Result<Vec<f64>> {
    if !lc_model.has_elapsed_input() {
        return Err(Error::config("label-correction model must take elapsed time"));
    }
    samples
        .iter()
        .map(|s| {
            if s.v || s.e >= w_a {
                Ok(0.0)
            } else {
                Ok(lc_model.forward(&s.features, Some(s.e))?.min(w_clip))
            }
        })
        .collect()
}
