//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use delayfb_core::logsim::stream_rng;
use delayfb_core::nnet::{grad, Example, LossKind, ModelParams, ModelShape, Target};
use delayfb_core::{FeatureSchema, DAY};
use rand::Rng;

/// O(n^2) pair count: P(s+ > s-) + P(tie)/2.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Walks every distinct threshold from the top and sums precision times
/// the recall gained at that threshold.
pub fn brute_prauc(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / total_pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

pub fn bce(f: f64, y: f64) -> f64 {
    -(y * f.ln() + (1.0 - y) * (1.0 - f).ln())
}

/// Mean loss written out from the per-kind definitions, without the
/// engine's soft-target shortcut.
pub fn reference_loss(params: &ModelParams, batch: &[Example<'_>], kind: LossKind) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let f = params.forward(ex.features, ex.elapsed).unwrap();
            let t = ex.target;
            match kind {
                LossKind::Oracle => bce(f, t.c),
                LossKind::Vanilla => bce(f, t.v),
                LossKind::Lc => {
                    -(t.v * f.ln() + t.w * (1.0 - t.v) * f.ln() + (1.0 - t.w) * (1.0 - t.v) * (1.0 - f).ln())
                }
                LossKind::Bce => bce(f, t.w),
            }
        })
        .sum();
    total / batch.len() as f64
}

pub struct GradDraw {
    pub params: ModelParams,
    pub features: Vec<Vec<u32>>,
    pub elapsed: Vec<Option<i64>>,
    pub targets: Vec<Target>,
}

impl GradDraw {
    pub fn batch(&self) -> Vec<Example<'_>> {
        self.features
            .iter()
            .zip(&self.elapsed)
            .zip(&self.targets)
            .map(|((f, &e), &t)| Example {
                features: f,
                elapsed: e,
                target: t,
            })
            .collect()
    }
}

pub fn grad_draw(kind: LossKind, seed: u64) -> GradDraw {
    let mut rng = stream_rng(seed, 77);
    let schema = FeatureSchema::new(vec![4, 3, 5]).unwrap();
    let with_elapsed = kind == LossKind::Bce || rng.random::<bool>();
    let shape = ModelShape {
        embedding_dim: rng.random_range(2..5),
        hidden: vec![rng.random_range(3..7), rng.random_range(2..5)],
        elapsed_window: with_elapsed.then_some(30 * DAY),
    };
    let mut params = ModelParams::init(&schema, &shape, &mut rng).unwrap();
    // Nonzero elapsed embeddings and biases so every tensor is exercised.
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let n = rng.random_range(1..12);
    let mut features = Vec::new();
    let mut elapsed = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..n {
        features.push(vec![rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0..5)]);
        elapsed.push(with_elapsed.then(|| rng.random_range(1..40 * DAY)));
        let v = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
        let c = if v == 1.0 || rng.random::<bool>() { 1.0 } else { 0.0 };
        targets.push(Target {
            v,
            c,
            w: rng.random(),
        });
    }
    GradDraw {
        params,
        features,
        elapsed,
        targets,
    }
}

/// Max relative error of the analytic gradient against central differences.
pub fn grad_check(draw: &GradDraw, kind: LossKind) -> f64 {
    let batch = draw.batch();
    let analytic = grad(&draw.params, &batch, kind).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let sizes: Vec<usize> = draw.params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let mut plus = draw.params.clone();
            plus.tensors_mut()[ti][i] += h;
            let mut minus = draw.params.clone();
            minus.tensors_mut()[ti][i] -= h;
            let numeric = (reference_loss(&plus, &batch, kind) - reference_loss(&minus, &batch, kind)) / (2.0 * h);
            let a = analytic.tensors[ti][i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
