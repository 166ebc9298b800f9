use ckasr::autodiff::Tape;
use ckasr::data::{gen_blobs, gen_spirals, BatchIterator, Dataset, Standardizer};
use ckasr::model::{init_params, record_cross_entropy, record_forward, ParamVars};
use ckasr::regularizer::CkaSrConfig;
use ckasr::sparsify::{imp_lth, random_sparse_mask};
use ckasr::train::{train_from, Sgd};
use ckasr::{train, ModelSpec, Rng, TrainConfig};

fn spirals(per_class: usize, data_seed: u64) -> (Dataset, Dataset) {
    let ds = gen_spirals(3, per_class, 0.05, &mut Rng::new(data_seed)).unwrap();
    let (a, b) = ds.split(0.25, &mut Rng::new(data_seed + 1)).unwrap();
    let st = Standardizer::fit(&a.features);
    (st.apply_dataset(&a), st.apply_dataset(&b))
}

fn plain(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 0.01,
        seed,
        cka_sr: CkaSrConfig::with_beta(0.0),
        ..Default::default()
    }
}

#[test]
fn zero_beta_matches_hand_written_cross_entropy_loop() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 3, 16, 9);
    let cfg = plain(3, 4);
    let trained = train(&spec, &tr, &ev, &cfg).unwrap();

    let mut params = init_params(&spec, &mut Rng::new(spec.seed)).unwrap();
    let mut sgd = Sgd::new(&params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    for epoch in 0..cfg.epochs {
        for batch in BatchIterator::new(&tr, cfg.batch_size, cfg.seed, epoch) {
            let mut tape = Tape::new();
            let vars = ParamVars::record(&mut tape, &params);
            let (logits, _) = record_forward(&mut tape, &params, &vars, None, &batch.features).unwrap();
            let ce = record_cross_entropy(&mut tape, logits, &batch.labels).unwrap();
            let grads = tape.backward(ce).unwrap();
            let gw: Vec<_> = vars.weights.iter().map(|&v| grads.wrt(v)).collect();
            let gb: Vec<_> = vars.biases.iter().map(|&v| grads.wrt(v)).collect();
            sgd.step(&mut params, &gw, &gb);
        }
    }
    for (a, b) in trained.params.layers.iter().zip(&params.layers) {
        assert_eq!(a.weight.as_slice(), b.weight.as_slice());
        assert_eq!(a.bias, b.bias);
    }
    assert!(trained.records.iter().all(|r| r.cka_loss == 0.0));
}

#[test]
fn masked_weights_stay_zero_through_training() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 3, 16, 1);
    let mask = random_sparse_mask(&spec, 0.7, &mut Rng::new(2)).unwrap();
    let cfg = TrainConfig {
        mask: Some(mask.clone()),
        cka_sr: CkaSrConfig::with_beta(1e-3),
        ..plain(3, 0)
    };
    let out = train(&spec, &tr, &ev, &cfg).unwrap();
    assert!(out.batches.iter().all(|b| b.mask_violations == 0));
    for (layer, m) in out.params.layers.iter().zip(&mask.layers) {
        for (w, keep) in layer.weight.as_slice().iter().zip(m.as_slice()) {
            if *keep == 0.0 {
                assert_eq!(*w, 0.0);
            }
        }
    }
    assert!(out.records.iter().all(|r| (r.mask_sparsity - mask.sparsity()).abs() < 1e-12));
}

#[test]
fn regularizer_runs_on_every_mth_global_step() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 3, 16, 1);
    let cfg = TrainConfig {
        cka_sr: CkaSrConfig {
            batch_m: 3,
            ..CkaSrConfig::with_beta(1e-3)
        },
        ..plain(2, 0)
    };
    let out = train(&spec, &tr, &ev, &cfg).unwrap();
    // 90 training examples in batches of 32: steps cross the epoch boundary
    assert_eq!(out.batches.len(), 6);
    for b in &out.batches {
        assert_eq!(b.applied, b.step % 3 == 0, "step {}", b.step);
        assert_eq!(b.cka_loss == 0.0, !b.applied);
    }
}

#[test]
fn subsampled_regularizer_still_trains() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 3, 16, 1);
    let cfg = TrainConfig {
        cka_sr: CkaSrConfig {
            sample_n: Some(8),
            ..CkaSrConfig::with_beta(1e-3)
        },
        ..plain(2, 0)
    };
    let out = train(&spec, &tr, &ev, &cfg).unwrap();
    assert!(out.batches.iter().all(|b| b.applied && b.cka_loss > 0.0));
}

#[test]
fn imp_three_rounds_at_half_leaves_an_eighth() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 3, 16, 5);
    let out = imp_lth(&spec, &tr, &ev, &plain(2, 0), 3, 0.5).unwrap();
    let total = out.mask.total() as f64;
    let density = 1.0 - out.mask.sparsity();
    assert!((density - 0.125).abs() <= 1.0 / total + 1e-12, "density {density}");
    assert_eq!(out.rounds.len(), 3);

    // rewound weights are the original initialisation under the final mask
    let init = init_params(&spec, &mut Rng::new(spec.seed)).unwrap();
    for ((r, i), m) in out.rewound.layers.iter().zip(&init.layers).zip(&out.mask.layers) {
        for ((&rw, &iw), &k) in r.weight.as_slice().iter().zip(i.weight.as_slice()).zip(m.as_slice()) {
            assert_eq!(rw, iw * k);
        }
    }
}

#[test]
fn single_layer_separates_blobs() {
    let ds = gen_blobs(4, 50, 5, 0.3, &mut Rng::new(7)).unwrap();
    let (a, b) = ds.split(0.25, &mut Rng::new(8)).unwrap();
    let spec = ModelSpec::mlp(5, 4, 1, 16, 0);
    let cfg = TrainConfig {
        epochs: 20,
        cka_sr: CkaSrConfig::with_beta(0.0),
        ..Default::default()
    };
    let acc = train(&spec, &a, &b, &cfg).unwrap().records.last().unwrap().eval_accuracy;
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn deeper_network_fits_spirals_better() {
    let (tr, ev) = spirals(200, 5);
    let mean = |depth| {
        (0..5u64)
            .map(|seed| {
                let spec = ModelSpec::mlp(2, 3, depth, 32, seed);
                train(&spec, &tr, &ev, &plain(30, seed)).unwrap().records.last().unwrap().eval_accuracy
            })
            .sum::<f64>()
            / 5.0
    };
    let (shallow, deep) = (mean(1), mean(4));
    assert!(deep > shallow, "depth 4 {deep} vs depth 1 {shallow}");
}

#[test]
fn resuming_from_params_is_deterministic() {
    let (tr, ev) = spirals(40, 3);
    let spec = ModelSpec::mlp(2, 3, 2, 8, 3);
    let init = init_params(&spec, &mut Rng::new(spec.seed)).unwrap();
    let cfg = TrainConfig {
        cka_sr: CkaSrConfig::with_beta(1e-3),
        ..plain(2, 7)
    };
    let a = train_from(init.clone(), &tr, &ev, &cfg).unwrap();
    let b = train_from(init, &tr, &ev, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.batches, b.batches);
}
