use delayfb_core::config::ExperimentConfig;
use delayfb_core::experiment::{self, ModelKind};
use delayfb_core::logsim::{simulate_log, stream_rng, Context, DelayLaw, GroundTruthWorld};
use delayfb_core::nnet::{ModelParams, ModelShape};
use delayfb_core::snapshot::observe;
use delayfb_core::trainer::{run_round, train_model, AltData, TrainOptions, TrainSet};
use delayfb_core::{FeatureSchema, DAY};

const SMALL: &str = "
seed = 11
seeds = 2
n_clicks = 6000
train_days = 8
valid_days = 1
test_days = 1
field_vocab = 6,4
num_contexts = 16
cvr_min = 0.05
cvr_max = 0.5
delay_mean_min_days = 0.5
delay_mean_max_days = 4
delay_law = exponential
drift = false
w_a_days = 30
tau_days = 2
n_alt = 2
w_clip = 0.95
strategy = none
strategy_threshold = 0.5
lc_holdout_fraction = 0.1
learning_rate = 0.02
l2_reg = 1e-6
batch_size = 128
max_epochs = 4
early_stop_patience = 1
embedding_dim = 3
hidden_sizes = 6
delay_groups = 3
";

fn small() -> ExperimentConfig {
    SMALL.parse().unwrap()
}

#[test]
fn alternative_training_transfers_and_replays() {
    let cfg = small();
    let data = experiment::prepare(&cfg, 11).unwrap();
    let lc = experiment::lc_data(&cfg, &data.train).unwrap();
    let out = experiment::train_ulc(&cfg, &data.schema, &data.train, &data.valid, &lc, 11).unwrap();
    assert_eq!(out.rounds.len(), 3);
    assert_eq!(out.cvr, out.rounds[2].cvr);

    // Round 0 starts from random embeddings; later rounds from the previous CVR model.
    let r0 = &out.rounds[0];
    assert_ne!(r0.lc_init.embedding, r0.cvr.embedding);
    for r in 1..3 {
        let (prev, cur) = (&out.rounds[r - 1], &out.rounds[r]);
        assert_eq!(cur.lc_init.embedding, prev.cvr.embedding);
        assert_ne!(cur.lc_init.layers, prev.lc.layers);
        assert_ne!(cur.lc.embedding, cur.lc_init.embedding, "LC training moved the embeddings");
    }

    // Any round replays from its predecessor's checkpoint.
    let alt = AltData {
        schema: &data.schema,
        train: &data.train,
        valid: &data.valid,
        lc_data: &lc,
    };
    let alt_cfg = cfg.alt_config(11);
    let replay = run_round(alt, &alt_cfg, 2, Some(&out.rounds[1].cvr)).unwrap();
    assert_eq!(replay, out.rounds[2]);
    let again = experiment::train_ulc(&cfg, &data.schema, &data.train, &data.valid, &lc, 11).unwrap();
    assert_eq!(again, out);
}

#[test]
fn no_alternation_means_one_round() {
    let mut cfg = small();
    cfg.n_alt = 0;
    let data = experiment::prepare(&cfg, 12).unwrap();
    let lc = experiment::lc_data(&cfg, &data.train).unwrap();
    let out = experiment::train_ulc(&cfg, &data.schema, &data.train, &data.valid, &lc, 12).unwrap();
    assert_eq!(out.rounds.len(), 1);
    assert_eq!(out.cvr, out.rounds[0].cvr);
}

#[test]
fn empty_lc_data_is_a_config_error() {
    let cfg = small();
    let data = experiment::prepare(&cfg, 13).unwrap();
    let err = experiment::train_ulc(&cfg, &data.schema, &data.train, &data.valid, &[], 13).unwrap_err();
    assert!(matches!(err, delayfb_core::Error::Config(_)));
}

#[test]
fn experiment_report_is_consistent() {
    let cfg = small();
    let seeds = experiment::run_seeds(&cfg, 2);
    let report = experiment::run_experiment(&cfg, &ModelKind::ALL, &seeds).unwrap();
    assert_eq!(report.runs.len(), 6);
    assert_eq!(report.config_hash, cfg.hash());
    for seed in seeds {
        let get = |k| report.runs.iter().find(|r| r.seed == seed && r.model == k).unwrap();
        let (v, o, u) = (get(ModelKind::Vanilla), get(ModelKind::Oracle), get(ModelKind::Ulc));
        let ri = (u.metrics.auc - v.metrics.auc) / (o.metrics.auc - v.metrics.auc);
        assert!((u.metrics.ri_auc.unwrap() - ri).abs() < 1e-12);
        assert_eq!(v.metrics.ri_auc, Some(0.0));
        assert_eq!(o.metrics.ri_auc, Some(1.0));
        assert_eq!(u.metrics.per_group.len(), 3);
        assert_eq!(u.lc_groups.as_ref().unwrap().len(), 3);
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn oracle_training_approaches_bayes_loss() {
    let schema = FeatureSchema::new(vec![4, 2]).unwrap();
    let contexts: Vec<Context> = (0..8u32)
        .map(|i| Context {
            features: vec![i % 4, i / 4],
            base_cvr: 0.05 + 0.1 * i as f64,
            delay_rate: 1.0 / ((1 + i) as f64 * DAY as f64),
        })
        .collect();
    let world = GroundTruthWorld::new(schema.clone(), contexts, vec![0.125; 8], 30 * DAY, DelayLaw::Exponential, None)
        .unwrap();
    let bayes: f64 = (0..8)
        .map(|i| {
            let p = world.conversion_prob(i);
            -0.125 * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum();

    let (events, labels) = simulate_log(&world, 80_000, 100 * DAY, 5).unwrap();
    let observed = observe(&events, 100 * DAY, 30 * DAY);
    let target = |range: std::ops::Range<usize>| {
        TrainSet::new(
            2,
            observed[range].iter().map(|s| (s.features.clone(), None, if labels[s.id as usize].c { 1.0 } else { 0.0 })),
            false,
        )
        .unwrap()
    };
    let (train, valid) = (target(0..30_000), target(30_000..80_000));
    let shape = ModelShape {
        embedding_dim: 4,
        hidden: vec![8],
        elapsed_window: None,
    };
    let init = ModelParams::init(&schema, &shape, &mut stream_rng(3, 1)).unwrap();
    let opts = TrainOptions {
        learning_rate: 0.01,
        l2_reg: 0.0,
        batch_size: 256,
        max_epochs: 30,
        patience: 3,
        seed: 3,
    };
    let (_, trace) = train_model(init, &train, &valid, &opts).unwrap();
    assert!((trace.best_valid - bayes).abs() < 0.01, "valid {} vs Bayes {bayes}", trace.best_valid);
}
