use proptest::prelude::*;

use mohets::data::{synthetic, DataConfig, Dataset, Segment};
use mohets::model::{checkpoint, ModelConfig, MoHets, RouterAssignment};
use mohets::tensor::gradcheck::{check_op, CheckOptions};
use mohets::tensor::{Graph, Tensor};
use mohets::train::loss::{balance, balance_graph};
use mohets::train::{lr_at, train, train_with, BalanceAggregation, TrainConfig, TrainOutputs, TrainSet};
use mohets::Error;

fn model_config() -> ModelConfig {
    ModelConfig {
        blocks: 2,
        d_model: 16,
        d_ff: 32,
        lookback: 48,
        variates: 2,
        ..ModelConfig::tiny()
    }
}

fn dataset(cfg: &ModelConfig) -> Dataset {
    let frame = synthetic::multi_sine(cfg.variates, 800, 0.05, 7).unwrap();
    Dataset::prepare("synthetic", frame, &DataConfig::new(cfg.lookback, cfg.horizon)).unwrap()
}

fn short(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 2,
        max_steps: Some(6),
        max_val_windows: Some(8),
        ..cfg
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let set = TrainSet::from_dataset(&ds).unwrap();
    let tc = short(TrainConfig::default());
    let run = || {
        let mut m = MoHets::<f32>::new(cfg.clone(), 3).unwrap();
        train(&mut m, &set, &tc, &TrainOutputs::default()).unwrap().steps
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
}

#[test]
fn frozen_validation_stops_after_patience() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let mut set = TrainSet::from_dataset(&ds).unwrap();
    set.train.truncate(8);
    let tc = TrainConfig { batch_size: 8, epochs: 50, ..Default::default() };
    let mut m = MoHets::<f32>::new(cfg, 0).unwrap();
    let report = train_with(&mut m, &set, &tc, &TrainOutputs::default(), |_| Ok(Some(1.0))).unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.epochs.len(), 1 + tc.patience);
    assert_eq!(report.epochs.iter().filter(|e| !e.improved).count(), tc.patience);
    assert_eq!(report.best_epoch, Some(0));
}

#[test]
fn artifacts_are_written() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let set = TrainSet::from_dataset(&ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs {
        dir: Some(dir.path().to_path_buf()),
        meta: serde_json::json!({"dataset": "synthetic"}),
    };
    let mut m = MoHets::<f32>::new(cfg.clone(), 1).unwrap();
    let report = train(&mut m, &set, &short(TrainConfig::default()), &out).unwrap();
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), report.steps.len());
    for key in ["step", "lr", "huber", "balance", "total", "f_histogram"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    assert_eq!(lines[0]["f_histogram"].as_array().unwrap().len(), cfg.blocks);
    for name in ["best.bin", "final.bin"] {
        let (back, side) = checkpoint::load::<f32>(&dir.path().join(name)).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(side.meta["dataset"], "synthetic");
    }
    // The returned model carries the best-validation parameters.
    let (best, _) = checkpoint::load::<f32>(&dir.path().join("best.bin")).unwrap();
    let b = ds.batch(&ds.window_starts(Segment::Test, 24).unwrap()[..2]).unwrap();
    assert_eq!(best.predict(&b).unwrap(), m.predict(&b).unwrap());
}

#[test]
fn logged_learning_rate_follows_schedule() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let set = TrainSet::from_dataset(&ds).unwrap();
    let tc = TrainConfig { max_steps: Some(20), ..short(TrainConfig::default()) };
    let mut m = MoHets::<f32>::new(cfg, 1).unwrap();
    let r = train(&mut m, &set, &tc, &TrainOutputs::default()).unwrap();
    for s in &r.steps {
        assert_eq!(s.lr, lr_at(s.step + 1, 20, tc.max_lr, tc.min_lr, tc.warmup_fraction));
    }
}

#[test]
fn non_finite_loss_aborts_with_last_good_checkpoint() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let set = TrainSet::from_dataset(&ds).unwrap();
    let mut m = MoHets::<f32>::new(cfg, 1).unwrap();
    let id = m.params.find("decoder.project").unwrap();
    m.params.value_mut(id).data_mut()[0] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs { dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let err = train(&mut m, &set, &short(TrainConfig::default()), &out).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
    assert!(err.is_numeric());
    assert!(dir.path().join("last_good.bin").exists());
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let cfg = ModelConfig { dropout: 0.0, drop_path: 0.0, ..model_config() };
    let ds = dataset(&cfg);
    let mut set = TrainSet::from_dataset(&ds).unwrap();
    set.train.truncate(8);
    set.val.clear();
    let tc = TrainConfig { batch_size: 8, epochs: 60, ..Default::default() };
    let mut m = MoHets::<f32>::new(cfg, 2).unwrap();
    let r = train(&mut m, &set, &tc, &TrainOutputs::default()).unwrap();
    let first = r.steps[0].huber;
    let last = r.last().unwrap().huber;
    assert!(last < 0.2 * first, "{first} -> {last}");
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = model_config();
    let ds = dataset(&cfg);
    let set = TrainSet::from_dataset(&ds).unwrap();
    let mut m = MoHets::<f32>::new(cfg, 0).unwrap();
    let tc = TrainConfig { min_lr: 1.0, max_lr: 0.1, ..Default::default() };
    assert!(matches!(train(&mut m, &set, &tc, &TrainOutputs::default()), Err(Error::Config(_))));
}

#[test]
fn balance_in_graph_matches_value_and_gradient() {
    let (tokens, experts, k) = (12, 4, 2);
    let logits: Vec<f64> = (0..tokens * experts).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
    let x = Tensor::new(vec![tokens, experts], logits).unwrap();
    let mut g = Graph::<f64>::inference();
    let v = g.constant(x.clone());
    let scores = g.softmax_last(v).unwrap();
    let a = RouterAssignment::from_scores(&g.value(scores).to_f64_vec(), experts, k);
    let trace = mohets::model::MoheTrace { scores, assignment: a.clone() };
    let b = balance_graph(&mut g, &[trace], BalanceAggregation::Mean).unwrap();
    assert!((g.value(b).item() - balance(&[a.clone()], BalanceAggregation::Mean)).abs() < 1e-12);

    let report = check_op("balance", &[x], &CheckOptions::default(), move |g, vars| {
        let scores = g.softmax_last(vars[0])?;
        let trace = mohets::model::MoheTrace { scores, assignment: a.clone() };
        balance_graph(g, &[trace], BalanceAggregation::Mean)
    })
    .unwrap();
    assert!(report.passed(1e-6), "{report:?}");
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    // With routing consistent with the scores (f = r), N·Σ f r ≥ 1 and uniform attains 1.
    #[test]
    fn consistent_routing_balance_is_at_least_one(n in 1usize..=8, p in simplex(8)) {
        let p: Vec<f64> = {
            let head = &p[..n];
            let s: f64 = head.iter().sum();
            head.iter().map(|x| x / s).collect()
        };
        let a = RouterAssignment {
            experts: n,
            top_k: 1,
            tokens: 1,
            selected: vec![0],
            gates: p.clone(),
            shared_gate: vec![],
            fraction: p.clone(),
            mean_score: p,
        };
        prop_assert!(a.balance() >= 1.0 - 1e-12);
    }
}

#[test]
fn uniform_routing_attains_the_minimum() {
    for n in 1..=8 {
        let scores = vec![1.0 / n as f64; n * n];
        let mut a = RouterAssignment::from_scores(&scores, n, 1);
        // Force one token per expert.
        a.fraction = vec![1.0 / n as f64; n];
        assert!((a.balance() - 1.0).abs() < 1e-12);
    }
}
