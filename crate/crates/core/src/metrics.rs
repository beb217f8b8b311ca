//! Ranking and calibration metrics, relative improvement and the
//! delay-stratified evaluations.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{ClickEvent, Duration, ObservedSample, SampleId};
use crate::error::{Error, Result};
use crate::nnet::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub prauc: f64,
    pub ll: f64,
}

/// Metrics of one model plus its relative improvements, when a vanilla and
/// an oracle reference are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub prauc: f64,
    pub ll: f64,
    pub ri_auc: Option<f64>,
    pub ri_prauc: Option<f64>,
    pub ri_ll: Option<f64>,
    pub per_group: Vec<Metrics>,
}

impl MetricsReport {
    pub fn from_metrics(m: Metrics) -> Self {
        Self {
            auc: m.auc,
            prauc: m.prauc,
            ll: m.ll,
            ri_auc: None,
            ri_prauc: None,
            ri_ll: None,
            per_group: Vec::new(),
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            auc: self.auc,
            prauc: self.prauc,
            ll: self.ll,
        }
    }

    /// Fills the RI fields against the given references.
    pub fn with_ri(mut self, vanilla: &Metrics, oracle: &Metrics) -> Result<Self> {
        self.ri_auc = Some(relative_improvement(self.auc, vanilla.auc, oracle.auc)?);
        self.ri_prauc = Some(relative_improvement(self.prauc, vanilla.prauc, oracle.prauc)?);
        self.ri_ll = Some(relative_improvement(self.ll, vanilla.ll, oracle.ll)?);
        Ok(self)
    }
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    Ok(())
}

fn by_score(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN")
}

/// ROC AUC via the rank-sum (Mann-Whitney) statistic with average ranks
/// for ties, so ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(by_score(scores));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: the step-interpolated area under the PR curve, with
/// tied scores forming a single threshold.
pub fn prauc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::MetricUndefined("PRAUC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| by_score(scores)(b, a));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Log loss; the same computation as the oracle loss.
pub fn logloss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    crate::losses::oracle_loss(scores, labels)
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<Metrics> {
    Ok(Metrics {
        auc: auc(scores, labels)?,
        prauc: prauc(scores, labels)?,
        ll: logloss(scores, labels)?,
    })
}

/// `(m_f - m_vanilla) / (m_oracle - m_vanilla)`.
pub fn relative_improvement(m_f: f64, m_vanilla: f64, m_oracle: f64) -> Result<f64> {
    let gap = m_oracle - m_vanilla;
    if gap == 0.0 {
        return Err(Error::MetricUndefined("oracle and vanilla metrics coincide".into()));
    }
    Ok((m_f - m_vanilla) / gap)
}

/// Splits `positives` (already in ascending-delay order) into `k` groups of
/// equal size; the last group absorbs the remainder.
fn split_groups(positives: &[usize], k: usize) -> Vec<&[usize]> {
    let base = positives.len() / k;
    (0..k)
        .map(|g| {
            let start = g * base;
            let end = if g + 1 == k { positives.len() } else { start + base };
            &positives[start..end]
        })
        .collect()
}

fn sort_by_delay(idx: &mut [usize], delays: &[Duration]) {
    idx.sort_by_key(|&i| (delays[i], i));
}

/// Test-set metrics per delay group. Positives are sorted by delay and split
/// into `k` groups; each group is evaluated together with every negative,
/// with each positive repeated `k` times so the group's conversion rate
/// matches the full test set.
pub fn delay_stratified_eval(
    scores: &[f64],
    labels: &[bool],
    delays: &[Option<Duration>],
    k: usize,
) -> Result<Vec<Metrics>> {
    check_scores(scores, labels)?;
    if delays.len() != labels.len() {
        return Err(Error::input("delays and labels differ in length"));
    }
    if k == 0 {
        return Err(Error::input("need at least one group"));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut delay_of = vec![0; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l {
            delay_of[i] = delays[i]
                .ok_or_else(|| Error::input(format!("positive at index {i} has no delay")))?;
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    if positives.len() < k {
        return Err(Error::input(format!(
            "{} positives cannot fill {k} delay groups",
            positives.len()
        )));
    }
    sort_by_delay(&mut positives, &delay_of);
    split_groups(&positives, k)
        .into_iter()
        .map(|group| {
            let cap = group.len() * k + negatives.len();
            let mut s = Vec::with_capacity(cap);
            let mut y = Vec::with_capacity(cap);
            for &i in group {
                for _ in 0..k {
                    s.push(scores[i]);
                    y.push(true);
                }
            }
            for &i in &negatives {
                s.push(scores[i]);
                y.push(false);
            }
            evaluate(&s, &y)
        })
        .collect()
}

/// Label-correction quality per delay group on training data: false
/// negatives (observed negative, eventually converting) are sorted by true
/// delay and split into `k` groups; each group joins every true negative and
/// the scores are evaluated against the true label.
pub fn lc_delay_eval_with<F>(
    samples: &[ObservedSample],
    events: &[ClickEvent],
    w_a: Duration,
    k: usize,
    mut score: F,
) -> Result<Vec<Metrics>>
where
    F: FnMut(&ObservedSample) -> Result<f64>,
{
    if k == 0 {
        return Err(Error::input("need at least one group"));
    }
    let truth: HashMap<SampleId, &ClickEvent> = events.iter().map(|e| (e.id, e)).collect();
    let mut fn_idx = Vec::new();
    let mut tn_idx = Vec::new();
    let mut delays = vec![0; samples.len()];
    for (i, s) in samples.iter().enumerate() {
        if s.v {
            continue;
        }
        let ev = truth
            .get(&s.id)
            .ok_or_else(|| Error::Data(format!("no ground truth for sample {}", s.id)))?;
        if ev.converts_within(w_a) {
            delays[i] = ev.delay().expect("converted");
            fn_idx.push(i);
        } else {
            tn_idx.push(i);
        }
    }
    if fn_idx.is_empty() {
        return Err(Error::input("training data holds no false negatives"));
    }
    if tn_idx.is_empty() {
        return Err(Error::input("training data holds no true negatives"));
    }
    if fn_idx.len() < k {
        return Err(Error::input(format!(
            "{} false negatives cannot fill {k} delay groups",
            fn_idx.len()
        )));
    }
    sort_by_delay(&mut fn_idx, &delays);
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut scored = |i: usize, cache: &mut HashMap<usize, f64>| -> Result<f64> {
        if let Some(&s) = cache.get(&i) {
            return Ok(s);
        }
        let s = score(&samples[i])?;
        cache.insert(i, s);
        Ok(s)
    };
    let tn_scores: Vec<f64> = tn_idx
        .iter()
        .map(|&i| scored(i, &mut cache))
        .collect::<Result<_>>()?;
    let groups: Vec<Vec<usize>> = split_groups(&fn_idx, k).into_iter().map(<[usize]>::to_vec).collect();
    groups
        .into_iter()
        .map(|group| {
            let mut s = Vec::with_capacity(group.len() + tn_scores.len());
            let mut y = Vec::with_capacity(group.len() + tn_scores.len());
            for i in group {
                s.push(scored(i, &mut cache)?);
                y.push(true);
            }
            s.extend_from_slice(&tn_scores);
            y.extend(std::iter::repeat_n(false, tn_scores.len()));
            evaluate(&s, &y)
        })
        .collect()
}

/// [`lc_delay_eval_with`] scoring each sample with `g(x, e)` at its actual
/// elapsed time.
pub fn lc_delay_eval(
    lc_model: &ModelParams,
    samples: &[ObservedSample],
    events: &[ClickEvent],
    w_a: Duration,
    k: usize,
) -> Result<Vec<Metrics>> {
    if !lc_model.has_elapsed_input() {
        return Err(Error::config("label-correction model must take elapsed time"));
    }
    lc_delay_eval_with(samples, events, w_a, k, |s| lc_model.forward(&s.features, Some(s.e)))
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::MetricUndefined("t-test needs two samples per group".into()));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sa * sa / na;
    let vb = sb * sb / nb;
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return Err(Error::MetricUndefined("t-test with zero variance".into()));
    }
    let t = (ma - mb) / se;
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::MetricUndefined(format!("t distribution: {e}")))?;
    Ok(TTest {
        t,
        df,
        p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}
