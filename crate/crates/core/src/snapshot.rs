//! Observed snapshots at a collection time and counterfactual labeling.

use std::collections::HashMap;

use crate::domain::{ClickEvent, Duration, LcSample, ObservedSample, OracleLabel, SampleId, Timestamp};
use crate::error::{Error, Result};

/// The dataset as it looks at collection time `t`: clicks strictly before
/// `t`, with conversions visible only when they happened by `t` inside the
/// attribution window.
pub fn observe(log: &[ClickEvent], t: Timestamp, w_a: Duration) -> Vec<ObservedSample> {
    log.iter()
        .filter(|ev| ev.cts < t)
        .map(|ev| {
            let visible = ev.cvt.filter(|&cvt| cvt <= t && cvt - ev.cts < w_a);
            ObservedSample {
                id: ev.id,
                features: ev.features.clone(),
                v: visible.is_some(),
                e: t - ev.cts,
                cts: ev.cts,
                cvt: visible,
            }
        })
        .collect()
}

/// Builds LC training data by pretending the data was collected at the
/// counterfactual deadline `t - tau`.
///
/// A sample is kept when it was clicked before the deadline and had not
/// converted by then. It is labelled positive when its conversion falls
/// between the counterfactual and the actual deadline. Observed positives
/// that converted before the counterfactual deadline are dropped.
pub fn counterfactual_label(
    data: &[ObservedSample],
    t: Timestamp,
    tau: Duration,
) -> Result<Vec<LcSample>> {
    let max_e = data.iter().map(|s| s.e).max().unwrap_or(0);
    if tau <= 0 || tau >= max_e {
        return Err(Error::config(format!(
            "tau = {tau}s must lie in (0, {max_e}s), the span of elapsed times"
        )));
    }
    let cd = t - tau;
    Ok(data
        .iter()
        .filter_map(|s| {
            if s.cts >= cd {
                return None;
            }
            let converts_after_cd = s.v && s.cvt.is_some_and(|cvt| cvt > cd);
            if s.v && !converts_after_cd {
                return None;
            }
            Some(LcSample {
                id: s.id,
                features: s.features.clone(),
                e_cd: s.e - tau,
                w: if converts_after_cd { 1.0 } else { 0.0 },
            })
        })
        .collect())
}

/// Fraction of eventual converters in `lc_data` that counterfactual labeling
/// marked positive. Returns 1 when no sample in `lc_data` converts.
pub fn labeling_recall(lc_data: &[LcSample], oracle: &[OracleLabel]) -> Result<f64> {
    let truth: HashMap<SampleId, bool> = oracle.iter().map(|l| (l.id, l.c)).collect();
    let mut hits = 0usize;
    let mut positives = 0usize;
    for s in lc_data {
        let c = *truth
            .get(&s.id)
            .ok_or_else(|| Error::Data(format!("no oracle label for sample {}", s.id)))?;
        if c {
            positives += 1;
            if s.w >= 1.0 {
                hits += 1;
            }
        }
    }
    Ok(if positives == 0 {
        1.0
    } else {
        hits as f64 / positives as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DAY;

    fn ev(id: u64, cts: Timestamp, cvt: Option<Timestamp>) -> ClickEvent {
        ClickEvent {
            id,
            features: vec![0],
            cts,
            cvt,
        }
    }

    fn obs(id: u64, t: Timestamp, cts: Timestamp, cvt: Option<Timestamp>) -> ObservedSample {
        ObservedSample {
            id,
            features: vec![0],
            v: cvt.is_some(),
            e: t - cts,
            cts,
            cvt,
        }
    }

    #[test]
    fn conversion_after_t_is_unobserved() {
        let t = 1_000;
        let d = observe(&[ev(1, t - 10, Some(t + 5))], t, 100);
        assert_eq!(d.len(), 1);
        assert!(!d[0].v);
        assert_eq!(d[0].e, 10);
        assert_eq!(d[0].cvt, None);
    }

    #[test]
    fn conversion_before_t_is_observed() {
        let t = 1_000;
        let d = observe(&[ev(1, t - 10, Some(t - 2))], t, 100);
        assert!(d[0].v);
        assert_eq!(d[0].e, 10);
        assert_eq!(d[0].cvt, Some(t - 2));
    }

    #[test]
    fn conversion_outside_window_is_invalid() {
        let w_a = 100;
        let t = 10_000;
        let cts = t - w_a - 1;
        let e = ev(1, cts, Some(cts + w_a + w_a / 2));
        let d = observe(std::slice::from_ref(&e), t, w_a);
        assert!(!d[0].v);
        assert!(!e.converts_within(w_a));
    }

    #[test]
    fn clicks_at_or_after_t_are_excluded() {
        let d = observe(&[ev(1, 1_000, None), ev(2, 999, None)], 1_000, 100);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].id, 2);
    }

    #[test]
    fn late_converter_becomes_lc_positive() {
        let t = 30 * DAY;
        let data = vec![obs(1, t, t - 10 * DAY, Some(t - 3 * DAY)), obs(99, t, 0, None)];
        let lc = counterfactual_label(&data, t, 7 * DAY).unwrap();
        let s = lc.iter().find(|s| s.id == 1).unwrap();
        assert_eq!(s.w, 1.0);
        assert_eq!(s.e_cd, 3 * DAY);
    }

    #[test]
    fn unconverted_sample_becomes_lc_negative() {
        let t = 30 * DAY;
        let data = vec![obs(1, t, t - 10 * DAY, None), obs(99, t, 0, None)];
        let lc = counterfactual_label(&data, t, 7 * DAY).unwrap();
        let s = lc.iter().find(|s| s.id == 1).unwrap();
        assert_eq!(s.w, 0.0);
        assert_eq!(s.e_cd, 3 * DAY);
    }

    #[test]
    fn click_after_cd_is_excluded() {
        let t = 30 * DAY;
        let data = vec![
            obs(1, t, t - 2 * DAY, None),
            obs(2, t, t - 2 * DAY, Some(t - DAY)),
            obs(99, t, 0, None),
        ];
        let lc = counterfactual_label(&data, t, 7 * DAY).unwrap();
        assert!(lc.iter().all(|s| s.id == 99));
    }

    #[test]
    fn early_converter_is_excluded() {
        let t = 30 * DAY;
        let data = vec![obs(1, t, t - 10 * DAY, Some(t - 8 * DAY)), obs(99, t, 0, None)];
        let lc = counterfactual_label(&data, t, 7 * DAY).unwrap();
        assert!(lc.iter().all(|s| s.id != 1));
    }

    #[test]
    fn tau_must_fit_inside_span() {
        let t = 30 * DAY;
        let data = vec![obs(1, t, t - 10 * DAY, None)];
        assert!(matches!(counterfactual_label(&data, t, 10 * DAY), Err(Error::Config(_))));
        assert!(matches!(counterfactual_label(&data, t, 0), Err(Error::Config(_))));
        assert!(matches!(counterfactual_label(&[], t, DAY), Err(Error::Config(_))));
    }

    fn lc(id: u64, w: f64) -> LcSample {
        LcSample {
            id,
            features: vec![0],
            e_cd: 1,
            w,
        }
    }

    #[test]
    fn recall_counts_only_true_converters() {
        let oracle = vec![
            OracleLabel { id: 1, c: true },
            OracleLabel { id: 2, c: true },
            OracleLabel { id: 3, c: false },
        ];
        let all_caught = [lc(1, 1.0), lc(2, 1.0), lc(3, 0.0)];
        assert_eq!(labeling_recall(&all_caught, &oracle).unwrap(), 1.0);
        let half = [lc(1, 1.0), lc(2, 0.0), lc(3, 0.0)];
        assert_eq!(labeling_recall(&half, &oracle).unwrap(), 0.5);
        assert_eq!(labeling_recall(&[lc(3, 0.0)], &oracle).unwrap(), 1.0);
        assert!(matches!(labeling_recall(&[lc(7, 0.0)], &oracle), Err(Error::Data(_))));
    }
}
