use adamec::cost::{memory_threshold_mb, noiseless_latency, DeviceProfile};
use adamec::graph::{OpConfig, OperatorKind};
use adamec::predictor::bias::{raw_inputs, INPUTS};
use adamec::predictor::forest::KindForest;
use adamec::predictor::sampling::grid_regions;
use adamec::predictor::supplement::failing_cells;
use adamec::predictor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(kinds: &[OperatorKind]) -> TrainingConfig {
    TrainingConfig {
        budget_scale: 0.1,
        kinds: kinds.to_vec(),
        forest: ForestParams { n_trees: 20, ..ForestParams::default() },
        bias: BiasParams { epochs: 300, ..BiasParams::default() },
        bias_configs_per_kind: 64,
        seed: 3,
        ..TrainingConfig::default()
    }
}

#[test]
fn default_sample_budgets() {
    assert_eq!(sample_space(OperatorKind::Conv, 12799, 1).len(), 12799);
    assert_eq!(default_budget(OperatorKind::Conv), 12799);
    let fc = sample_space(OperatorKind::Fc, 121, 1);
    assert_eq!(fc.len(), 121);
    assert!(fc.iter().all(|c| c.kind == OperatorKind::Fc && (1..=512).contains(&c.cin) && (1..=512).contains(&c.cout)));
    assert!(sample_space(OperatorKind::Conv, 0, 1).is_empty());
}

#[test]
fn noiseless_forest_generalizes_on_conv() {
    let dev = DeviceProfile::new("d", 1e6).with_noise(0.0);
    let configs = sample_space(OperatorKind::Conv, default_budget(OperatorKind::Conv), 9);
    let samples = collect_samples(&configs, &dev, &MemPolicy::Ample).unwrap();
    let forest = train_forest(&samples, &ForestParams { n_trees: 30, ..ForestParams::default() }, 9).unwrap();
    let m = forest.kind(OperatorKind::Conv).unwrap();
    let metrics = m.evaluate(&m.holdout).unwrap();
    assert!(metrics.r2 >= 0.95, "{metrics:?}");
}

#[test]
fn predictions_stay_within_training_range() {
    let dev = DeviceProfile::new("d", 2e6);
    let samples = collect_samples(&sample_space(OperatorKind::Fc, 121, 4), &dev, &MemPolicy::Ample).unwrap();
    let forest = train_forest(&samples, &ForestParams { n_trees: 10, ..ForestParams::default() }, 4).unwrap();
    let k = forest.kind(OperatorKind::Fc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let c = OpConfig::fc(rng.gen_range(1..=512), rng.gen_range(1..=512));
        let t = k.predict_target(&c);
        assert!(t >= k.target_min - 1e-9 && t <= k.target_max + 1e-9);
    }
}

#[test]
fn supplement_draws_only_in_failing_cells() {
    let dev = DeviceProfile::new("d", 1e6);
    let samples = collect_samples(&sample_space(OperatorKind::Conv, 600, 5), &dev, &MemPolicy::Ample).unwrap();
    let params = ForestParams { n_trees: 10, ..ForestParams::default() };
    let forest = train_forest(&samples, &params, 5).unwrap();
    let sp = SupplementParams { acc_threshold: 0.9, max_rounds: 1, per_cell: 8, ..SupplementParams::default() };
    let failing = failing_cells(forest.kind(OperatorKind::Conv).unwrap(), &sp);
    let before = forest.kind(OperatorKind::Conv).unwrap().n_train;
    let (after, report) = adaptive_supplement(forest, &dev, &sp, 6).unwrap();
    assert_eq!(report.rounds.len(), usize::from(!failing.is_empty()));
    for round in &report.rounds {
        assert!(round.drawn.iter().all(|c| round.failing.iter().any(|f| f.region.contains(c))));
        assert_eq!(round.drawn.len(), round.failing.len() * sp.per_cell);
        assert!(round.train_sizes[&OperatorKind::Conv] >= before);
    }
    assert!(after.kind(OperatorKind::Conv).unwrap().n_train >= before);
}

#[test]
fn supplement_noop_cases() {
    let dev = DeviceProfile::new("d", 1e6);
    let samples = collect_samples(&sample_space(OperatorKind::Fc, 121, 2), &dev, &MemPolicy::Ample).unwrap();
    let forest = train_forest(&samples, &ForestParams { n_trees: 5, ..ForestParams::default() }, 2).unwrap();
    let none = SupplementParams { max_rounds: 0, ..SupplementParams::default() };
    let (same, report) = adaptive_supplement(forest.clone(), &dev, &none, 1).unwrap();
    assert_eq!(same, forest);
    assert!(report.rounds.is_empty());
    let lenient = SupplementParams { acc_threshold: 1e-9, ..SupplementParams::default() };
    let (same, report) = adaptive_supplement(forest.clone(), &dev, &lenient, 1).unwrap();
    assert_eq!(same, forest);
    assert_eq!(report.supplementary_samples, 0);
}

#[test]
fn grid_regions_partition_the_space() {
    let regions = grid_regions(OperatorKind::Conv, 4);
    for c in sample_space(OperatorKind::Conv, 300, 8) {
        assert_eq!(regions.iter().filter(|r| r.contains(&c)).count(), 1, "{c:?}");
    }
}

#[test]
fn ample_memory_bias_is_degenerate() {
    let dev = DeviceProfile::new("d", 1e6).with_noise(0.0);
    let samples = collect_samples(&sample_space(OperatorKind::Fc, 121, 1), &dev, &MemPolicy::Ample).unwrap();
    let forest = train_forest(&samples, &ForestParams { n_trees: 20, ..ForestParams::default() }, 1).unwrap();
    let bias = train_bias(&samples, &forest, &BiasParams::default(), 1).unwrap();
    assert!(bias.degenerate);
    assert!(samples.iter().all(|s| bias.bias_ms(&s.config, s.avail_mem_mb, 1.0) == 0.0));
}

#[test]
fn atom_latency_is_additive_and_memory_sensitive() {
    let dev = DeviceProfile::new("d", 1e6);
    let (models, _) = train_device(&dev, &small_config(&[OperatorKind::Conv, OperatorKind::Fc])).unwrap();
    let predictor = Predictor::new([models.clone()]);
    let ops = [OpConfig::conv(64, 32, 64, 3, 1), OpConfig::conv(62, 64, 64, 3, 2), OpConfig::fc(256, 10)];
    let parts: f64 = ops.iter().map(|o| predict_ops_latency(&predictor, [o], &dev, 1e9).unwrap()).sum();
    let whole = predict_ops_latency(&predictor, ops.iter(), &dev, 1e9).unwrap();
    assert_eq!(whole, parts);

    // Footprint around 100 MB, so half the threshold lies inside the swept grid.
    let single = OpConfig::conv(224, 256, 256, 3, 1);
    let ample = predictor.operator_latency(&single, &dev, 1e9).unwrap();
    let f = models.forest_latency(&single).unwrap();
    assert_eq!(ample, f + models.bias.bias_ms(&single, 1e9, f));
    let squeezed = predictor.operator_latency(&single, &dev, 0.5 * memory_threshold_mb(&single, &dev)).unwrap();
    assert!(squeezed > ample, "{squeezed} vs {ample}");
}

#[test]
fn unknown_device_and_kind() {
    let dev = DeviceProfile::new("d", 1e6);
    let (models, _) = train_device(&dev, &small_config(&[OperatorKind::Fc])).unwrap();
    let p = Predictor::new([models]);
    assert!(matches!(
        p.operator_latency(&OpConfig::conv(8, 8, 8, 3, 1), &dev, 1e9),
        Err(adamec::Error::UnsupportedOperator(OperatorKind::Conv))
    ));
    let other = DeviceProfile::new("elsewhere", 1e6);
    assert!(matches!(p.operator_latency(&OpConfig::fc(8, 8), &other, 1e9), Err(adamec::Error::NotFound(_))));
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let dev = DeviceProfile::new("d", 1e6).with_seed(4);
    let cfg = small_config(&[OperatorKind::Fc, OperatorKind::MaxPool]);
    let (a, ra) = train_predictor(std::slice::from_ref(&dev), &cfg).unwrap();
    let (b, rb) = train_predictor(&[dev], &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    let back = Predictor::from_json(&a.to_json()).unwrap();
    assert_eq!(back.to_json(), a.to_json());
}

#[test]
fn bias_inputs_are_finite_for_unbounded_memory() {
    let x = raw_inputs(&OpConfig::conv(32, 3, 8, 3, 1), f64::INFINITY);
    assert_eq!(x.len(), INPUTS);
    assert!(x.iter().all(|v| v.is_finite()));
}

#[test]
fn sample_latencies_follow_the_oracle_when_noiseless() {
    let dev = DeviceProfile::new("d", 1e6).with_noise(0.0);
    let configs = sample_space(OperatorKind::AvgPool, 50, 3);
    for s in collect_samples(&configs, &dev, &MemPolicy::Fixed(1.0)).unwrap() {
        assert_eq!(s.latency_ms, noiseless_latency(&s.config, &dev, 1.0));
    }
}

#[test]
fn kind_forest_rejects_foreign_samples() {
    let dev = DeviceProfile::new("d", 1e6);
    let samples = collect_samples(&sample_space(OperatorKind::Fc, 20, 1), &dev, &MemPolicy::Ample).unwrap();
    assert!(KindForest::fit(OperatorKind::Conv, samples, Vec::new(), &ForestParams::default(), 1).is_err());
}

