use dlr_core::autodiff::Tape;
use dlr_core::datagen::{NormStats, WindowSpec, WindowedDataset};
use dlr_core::graph::LineId;
use dlr_core::model::{Checkpoint, Model, ModelConfig, ModelDims, Variant};
use dlr_core::train::{batch_gradient, total_loss, train, TrainConfig};
use dlr_core::{Execution, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

#[test]
fn identity_operator_reduces_to_plain_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let lines = rng.random_range(1..6);
        let dims = ModelDims {
            lines,
            input_dim: rng.random_range(1..8),
            horizon: rng.random_range(1..6),
        };
        let base = ModelConfig {
            hidden: rng.random_range(1..7),
            head_hidden: rng.random_range(1..5),
            shared_heads: case % 3 == 0,
            ..ModelConfig::default()
        };
        let seed = rng.random();
        let graph = Model::new(
            ModelConfig {
                variant: Variant::DLgclstm,
                ..base.clone()
            },
            dims,
            Some(Matrix::identity(lines)),
            seed,
        )
        .unwrap();
        let plain = Model::new(
            ModelConfig {
                variant: Variant::Lstm,
                ..base
            },
            dims,
            None,
            seed,
        )
        .unwrap();
        let steps = rng.random_range(1..9);
        let history: Vec<Matrix> = (0..steps).map(|_| normal(&mut rng, lines, dims.input_dim)).collect();
        let (gl, gu) = graph.predict(&history).unwrap();
        let (pl, pu) = plain.predict(&history).unwrap();
        assert_eq!(gl, pl, "case {case}");
        assert_eq!(gu, pu, "case {case}");
    }
}

#[test]
fn backward_direction_equals_forward_cell_on_reversed_input() {
    // A unidirectional model given the reversed history, with the backward
    // parameters, reproduces the backward half of the representation.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = ModelDims {
        lines: 3,
        input_dim: 4,
        horizon: 2,
    };
    let cfg = ModelConfig {
        variant: Variant::Lstm,
        hidden: 5,
        head_hidden: 2,
        ..ModelConfig::default()
    };
    let bi = Model::new(cfg.clone(), dims, None, 8).unwrap();
    let history: Vec<Matrix> = (0..6).map(|_| normal(&mut rng, 3, 4)).collect();
    let mut tape = Tape::new();
    let vars = bi.register_frozen(&mut tape);
    let rep = bi.encode(&mut tape, &vars, &history).unwrap();
    let rep = tape.value(rep).clone();

    let uni_cfg = ModelConfig {
        bidirectional: false,
        ..cfg
    };
    let mut uni = Model::new(uni_cfg, dims, None, 0).unwrap();
    uni.params_mut()[..3].clone_from_slice(&bi.params()[3..6]);
    let reversed: Vec<Matrix> = history.iter().rev().cloned().collect();
    let mut tape = Tape::new();
    let vars = uni.register_frozen(&mut tape);
    let h = uni.encode(&mut tape, &vars, &reversed).unwrap();
    assert_eq!(tape.value(h), &rep.slice_cols(0, 5));
}

fn naive_loss(lower: &Matrix, upper: &Matrix, y: &Matrix, q: [f64; 2]) -> f64 {
    let mut total = 0.0;
    for (bound, level) in [(lower, q[0]), (upper, q[1])] {
        for i in 0..y.rows() {
            for t in 0..y.cols() {
                let diff = y[(i, t)] - bound[(i, t)];
                total += if diff >= 0.0 {
                    level * diff
                } else {
                    (level - 1.0) * diff
                };
            }
        }
    }
    total
}

#[test]
fn total_loss_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let (e, tau) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let (lo, hi, y) = (
            normal(&mut rng, e, tau),
            normal(&mut rng, e, tau),
            normal(&mut rng, e, tau),
        );
        let ql = rng.random_range(0.01..0.5);
        let q = [ql, rng.random_range(ql + 0.01..0.99)];
        let mut tape = Tape::new();
        let bundle = dlr_core::model::QuantileVars {
            lower: tape.param(lo.clone()),
            upper: tape.param(hi.clone()),
        };
        let target = tape.constant(y.clone());
        let l = total_loss(&mut tape, bundle, target, q).unwrap();
        let got = tape.scalar(l);
        assert!((got - naive_loss(&lo, &hi, &y, q)).abs() < 1e-12);
    }
}

/// Dataset of `windows` stride-1 windows over noise features.
fn toy_dataset(
    rng: &mut ChaCha8Rng,
    lines: usize,
    windows: usize,
    spec: WindowSpec,
    target: impl Fn(&mut ChaCha8Rng) -> f64,
) -> WindowedDataset {
    let hours = windows - 1 + spec.history + spec.horizon;
    let features = (0..hours).map(|_| normal(rng, lines, 3)).collect();
    let targets = (0..lines).map(|_| (0..hours).map(|_| target(rng)).collect()).collect();
    let stats = NormStats {
        feature_mean: vec![0.0; 3],
        feature_std: vec![1.0; 3],
        target_min: vec![0.0; lines],
        target_max: vec![1.0; lines],
    };
    let start = chrono::NaiveDate::from_ymd_opt(2022, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    WindowedDataset::from_parts(features, targets, (0..windows).collect(), spec, stats, start).unwrap()
}

fn small_model(data: &WindowedDataset, shared: bool, seed: u64) -> Model {
    let cfg = ModelConfig {
        variant: Variant::Lstm,
        hidden: 4,
        head_hidden: 4,
        shared_heads: shared,
        ..ModelConfig::default()
    };
    let dims = ModelDims {
        lines: data.line_count(),
        input_dim: data.feature_dim(),
        horizon: data.spec().horizon,
    };
    Model::new(cfg, dims, None, seed).unwrap()
}

const TOY_SPEC: WindowSpec = WindowSpec {
    history: 3,
    horizon: 4,
    stride: 1,
};

#[test]
fn constant_targets_are_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = toy_dataset(&mut rng, 2, 64, TOY_SPEC, |_| 0.6);
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: Some(8),
        learning_rate: 3e-3,
        weight_decay: 0.0,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let out = train(small_model(&data, false, 2), &data, &cfg, Execution::Parallel, |_| {}).unwrap();
    let first = out.history[0].train_loss;
    assert!(out.best_val_loss < 0.01 * first, "{} vs {first}", out.best_val_loss);
    let (lo, hi) = out.model.predict(data.history(0)).unwrap();
    for v in lo.as_slice().iter().chain(hi.as_slice()) {
        assert!((v - 0.6).abs() < 0.02, "{v}");
    }
}

#[test]
fn bounds_converge_to_empirical_quantiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    // squared uniforms: skewed, with 10th/90th percentiles 0.01 and 0.81
    let data = toy_dataset(&mut rng, 2, 400, TOY_SPEC, |r| r.random::<f64>().powi(2));
    let mut all: Vec<f64> = (0..data.len())
        .flat_map(|k| data.target_normalized(k).into_vec())
        .collect();
    all.sort_by(f64::total_cmp);
    let pct = |p: f64| all[((all.len() - 1) as f64 * p).round() as usize];
    let (q10, q90) = (pct(0.1), pct(0.9));

    let cfg = TrainConfig {
        epochs: 25,
        batch_size: Some(16),
        learning_rate: 3e-3,
        weight_decay: 0.0,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(small_model(&data, true, 6), &data, &cfg, Execution::Parallel, |_| {}).unwrap();
    let (mut lo_sum, mut hi_sum, mut n) = (0.0, 0.0, 0.0);
    for k in 0..data.len() {
        let (lo, hi) = out.model.predict(data.history(k)).unwrap();
        lo_sum += lo.sum();
        hi_sum += hi.sum();
        n += lo.len() as f64;
    }
    let (lo, hi) = (lo_sum / n, hi_sum / n);
    assert!((lo - q10).abs() < 0.05, "lower {lo} vs {q10}");
    assert!((hi - q90).abs() < 0.05, "upper {hi} vs {q90}");
}

#[test]
fn training_is_reproducible_across_runs_and_execution_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data = toy_dataset(&mut rng, 3, 30, TOY_SPEC, |r| r.random());
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: Some(7),
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |exec| train(small_model(&data, false, 1), &data, &cfg, exec, |_| {}).unwrap();
    let a = run(Execution::Parallel);
    let b = run(Execution::Parallel);
    let c = run(Execution::Sequential);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history, c.history);
    assert_eq!(a.model.params(), c.model.params());

    let idx: Vec<usize> = (0..data.len()).collect();
    let (lp, gp) = batch_gradient(&a.model, &data, &idx, Execution::Parallel).unwrap();
    let (ls, gs) = batch_gradient(&a.model, &data, &idx, Execution::Sequential).unwrap();
    assert_eq!(lp.to_bits(), ls.to_bits());
    assert_eq!(gp, gs);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = toy_dataset(&mut rng, 3, 5, TOY_SPEC, |r| r.random());
    let model = small_model(&data, false, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let ids = vec![LineId(4), LineId(5), LineId(9)];
    let mut ck = Checkpoint::from_model(
        &model,
        ids.clone(),
        "abc".into(),
        TOY_SPEC,
        data.stats().clone(),
        None,
        None,
    );
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.meta.line_ids, ids);
    let restored = loaded.into_model(None).unwrap();
    assert_eq!(restored.params(), model.params());
    assert_eq!(
        restored.predict(data.history(1)).unwrap(),
        model.predict(data.history(1)).unwrap()
    );

    let bin = path.with_extension("bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[17] ^= 0x40;
    std::fs::write(&bin, bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}
