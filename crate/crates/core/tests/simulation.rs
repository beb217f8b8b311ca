use delayfb_core::logsim::{simulate_log, Context, DelayLaw, GroundTruthWorld};
use delayfb_core::snapshot::{counterfactual_label, labeling_recall, observe};
use delayfb_core::{FeatureSchema, DAY};

fn single(cvr: f64, rate: f64) -> GroundTruthWorld {
    GroundTruthWorld::new(
        FeatureSchema::new(vec![1]).unwrap(),
        vec![Context {
            features: vec![0],
            base_cvr: cvr,
            delay_rate: rate,
        }],
        vec![1.0],
        30 * DAY,
        DelayLaw::Exponential,
        None,
    )
    .unwrap()
}

#[test]
fn exponential_delays_pass_ks() {
    let rate = 1.0 / (2.0 * DAY as f64);
    let world = single(1.0, rate);
    let (events, _) = simulate_log(&world, 100_000, 10 * DAY, 42).unwrap();
    let mut delays: Vec<f64> = events.iter().filter_map(|e| e.delay()).map(|d| d as f64).collect();
    delays.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = delays.len() as f64;
    // Truncation at w_a removes exp(-15) of the mass: negligible next to the critical value.
    let cdf = |t: f64| 1.0 - (-rate * t).exp();
    let d = delays
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / n.sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn conversion_fraction_matches_truncated_cdf() {
    let rate = 1.0 / (20.0 * DAY as f64);
    let world = single(0.3, rate);
    let n = 100_000;
    let (_, labels) = simulate_log(&world, n, 10 * DAY, 7).unwrap();
    let p = 0.3 * (1.0 - (-rate * (30 * DAY - 1) as f64).exp());
    let frac = labels.iter().filter(|l| l.c).count() as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((frac - p).abs() < 3.0 * sigma, "{frac} vs {p} (sigma {sigma})");
}

#[test]
fn oracle_labels_agree_with_emitted_conversions() {
    let world = single(0.6, 1.0 / (25.0 * DAY as f64));
    let (events, labels) = simulate_log(&world, 20_000, 40 * DAY, 3).unwrap();
    for (e, l) in events.iter().zip(&labels) {
        assert_eq!(e.id, l.id);
        assert_eq!(l.c, e.cvt.is_some());
        if let Some(d) = e.delay() {
            assert!((1..30 * DAY).contains(&d));
        }
    }
    // Some delays exceed the window at this rate, so some converters are suppressed.
    assert!(labels.iter().filter(|l| l.c).count() < 12_000 - 500);
}

#[test]
fn stale_samples_have_final_labels() {
    let world = single(0.5, 1.0 / (10.0 * DAY as f64));
    let (events, labels) = simulate_log(&world, 5_000, 60 * DAY, 9).unwrap();
    let t = 60 * DAY;
    for s in observe(&events, t, world.w_a) {
        if s.e >= world.w_a {
            assert_eq!(s.v, labels[s.id as usize].c, "sample {}", s.id);
        }
    }
}

#[test]
fn recall_grows_with_tau() {
    let world = single(0.4, 1.0 / (5.0 * DAY as f64));
    let (events, labels) = simulate_log(&world, 50_000, 40 * DAY, 5).unwrap();
    let t = 40 * DAY;
    let observed = observe(&events, t, world.w_a);
    let recalls: Vec<f64> = [1, 3, 7, 14]
        .iter()
        .map(|&d| labeling_recall(&counterfactual_label(&observed, t, d * DAY).unwrap(), &labels).unwrap())
        .collect();
    assert!(recalls.windows(2).all(|w| w[0] < w[1]), "{recalls:?}");
}
