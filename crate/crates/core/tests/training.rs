//! Training loop behaviour: determinism, resume, batching, failure paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::autograd::Tape;
use unetsr::loss::LossConfig;
use unetsr::model::{Checkpoint, Model, NetConfig};
use unetsr::pipeline::synthetic;
use unetsr::train::{
    adam_step, AdamConfig, AdamState, TrainConfig, TrainSample, Trainer, BEST_CHECKPOINT,
    LATEST_CHECKPOINT,
};
use unetsr::{Error, Tensor};

fn net() -> NetConfig {
    NetConfig {
        seed: 11,
        ..NetConfig::new(2, 2, 3)
    }
}

fn samples(model: &Model, n: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let hr = synthetic::random_rectangles(16, 16, 4, &mut rng);
            let lr = synthetic::downscale_pair(&hr, 2).unwrap();
            TrainSample::new(format!("s{i}"), model, &lr, &hr).unwrap()
        })
        .collect()
}

fn cfg(epochs: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        seed: 4,
        ..Default::default()
    }
}

fn run(cfg: TrainConfig) -> Trainer {
    let model = Model::build(net()).unwrap();
    let data = samples(&model, 5, 1);
    let mut t = Trainer::new(model, cfg).unwrap();
    t.fit(&data, None, None).unwrap();
    t
}

#[test]
fn zero_weight_mixge_trains_exactly_like_mse() {
    let a = run(TrainConfig {
        loss: LossConfig::mixge(0.0),
        ..cfg(3)
    });
    let b = run(TrainConfig {
        loss: LossConfig::mse(),
        ..cfg(3)
    });
    assert_eq!(
        a.checkpoint().to_bytes().unwrap(),
        b.checkpoint().to_bytes().unwrap()
    );
}

#[test]
fn seeded_runs_are_bit_identical() {
    let a = run(cfg(5)).checkpoint().to_bytes().unwrap();
    let b = run(cfg(5)).checkpoint().to_bytes().unwrap();
    assert_eq!(a, b);
    let other = run(TrainConfig { seed: 5, ..cfg(5) })
        .checkpoint()
        .to_bytes()
        .unwrap();
    assert_ne!(a, other, "shuffle seed should change the batch order");
}

#[test]
fn resume_through_a_file_matches_an_uninterrupted_run() {
    let full = run(cfg(5));
    let dir = tempfile::tempdir().unwrap();
    let first = run(cfg(3));
    first
        .checkpoint()
        .save(&dir.path().join("mid.usrc"))
        .unwrap();
    let ck = Checkpoint::load(&dir.path().join("mid.usrc")).unwrap();
    assert_eq!(ck.epoch, 3);
    let mut resumed = Trainer::from_checkpoint(&ck, cfg(5)).unwrap();
    let data = samples(&resumed.model, 5, 1);
    let report = resumed.fit(&data, None, None).unwrap();
    assert_eq!(
        report.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
        [3, 4]
    );
    assert!(resumed.model.params.bit_eq(&full.model.params));
    assert!(resumed.adam.bit_eq(&full.adam));
}

#[test]
fn a_batch_step_uses_the_mean_gradient() {
    let model = Model::build(net()).unwrap();
    let data = samples(&model, 2, 9);
    let loss = LossConfig::mixge(0.1);

    // oracle: per-sample gradients, averaged by hand, one Adam step
    let mut expected = model.clone();
    let mut mean: Vec<Vec<f64>> = expected
        .params
        .iter()
        .map(|(_, t)| vec![0.0; t.len()])
        .collect();
    for s in &data {
        let tape = Tape::new();
        let vars = expected.attach(&tape);
        let out = expected.forward(&tape, &vars, &s.input).unwrap();
        let grads = loss
            .apply(out, tape.constant(&s.target))
            .unwrap()
            .backward()
            .unwrap();
        for (m, v) in mean.iter_mut().zip(&vars) {
            let g = grads.get(*v).unwrap();
            m.iter_mut().zip(g).for_each(|(a, b)| *a += b / 2.0);
        }
    }
    for ((_, p), g) in expected.params.iter_mut().zip(&mean) {
        p.zero_grad();
        p.accumulate_grad(g).unwrap();
    }
    let mut state = AdamState::new(&expected.params);
    adam_step(
        &mut expected.params,
        &mut state,
        1e-3,
        &AdamConfig::default(),
    )
    .unwrap();

    let mut t = Trainer::new(
        model,
        TrainConfig {
            epochs: 1,
            batch_size: 2,
            loss,
            ..Default::default()
        },
    )
    .unwrap();
    t.fit(&data, None, None).unwrap();
    for ((name, a), (_, b)) in t.model.params.iter().zip(expected.params.iter()) {
        assert!(a.max_abs_diff(b) <= 1e-15, "{name}");
    }
}

#[test]
fn nan_loss_aborts_and_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::build(net()).unwrap();
    let mut data = samples(&model, 3, 2);
    let mut t = Trainer::new(model, cfg(2)).unwrap();
    t.fit(&data, None, Some(dir.path())).unwrap();
    let latest = dir.path().join(LATEST_CHECKPOINT);
    let good = std::fs::read(&latest).unwrap();

    data[1].target.data_mut()[7] = f64::NAN;
    t.cfg.epochs = 6;
    let err = t.fit(&data, None, Some(dir.path())).unwrap_err();
    match &err {
        Error::NonFinite { what } => {
            assert!(what.contains("epoch 2") && what.contains("s1"), "{what}")
        }
        other => panic!("expected NonFinite, got {other}"),
    }
    assert_eq!(std::fs::read(&latest).unwrap(), good);
    assert_eq!(Checkpoint::load(&latest).unwrap().epoch, 2);
}

#[test]
fn best_checkpoint_tracks_validation_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::build(net()).unwrap();
    let train = samples(&model, 3, 3);
    let val = samples(&model, 2, 4);
    let mut t = Trainer::new(model, cfg(4)).unwrap();
    let report = t.fit(&train, Some(&val), Some(dir.path())).unwrap();
    let psnrs: Vec<f64> = report.epochs.iter().map(|e| e.val_psnr.unwrap()).collect();
    let best = psnrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_epoch = psnrs.iter().position(|&p| p == best).unwrap() as u64;
    let ck = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(ck.best_val_psnr, Some(best));
    assert_eq!(ck.epoch, best_epoch + 1);
    assert_eq!(
        Checkpoint::load(&dir.path().join(LATEST_CHECKPOINT))
            .unwrap()
            .epoch,
        4
    );
}

#[test]
fn damaged_checkpoints_are_reported_as_corrupt() {
    let bytes = run(cfg(1)).checkpoint().to_bytes().unwrap();
    for cut in [0, 3, 15, 16, 40, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Corrupt { .. }) => {}
            other => panic!("truncation at {cut}: {:?}", other.map(|c| c.epoch)),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Corrupt { .. })
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}

#[test]
fn every_parameter_block_affects_the_output() {
    let model = Model::build(net()).unwrap();
    let lr = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let base = model.super_resolve(&lr).unwrap();
    for name in model.params.names().map(str::to_owned).collect::<Vec<_>>() {
        let mut m = model.clone();
        let t = m.params.get_mut(&name).unwrap();
        *t = t.map(|v| v + 0.05);
        let out = m.super_resolve(&lr).unwrap();
        assert!(
            out.max_abs_diff(&base) > 1e-9,
            "{name} has no effect on the output"
        );
    }
}

#[test]
fn all_parameter_gradients_are_finite_and_reach_every_block() {
    let model = Model::build(net()).unwrap();
    let data = samples(&model, 1, 6);
    let tape = Tape::new();
    let vars = model.attach(&tape);
    let out = model.forward(&tape, &vars, &data[0].input).unwrap();
    let grads = LossConfig::mixge(0.1)
        .apply(out, tape.constant(&data[0].target))
        .unwrap()
        .backward()
        .unwrap();
    for (v, name) in vars.iter().zip(model.params.names()) {
        let g = grads
            .get(*v)
            .unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(g.iter().all(|x| x.is_finite()), "{name}");
        assert!(g.iter().any(|x| *x != 0.0), "{name}: all-zero gradient");
    }
}

#[test]
fn training_reduces_the_loss() {
    let model = Model::build(net()).unwrap();
    let data = samples(&model, 2, 8);
    let mut t = Trainer::new(
        model,
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let r = t.fit(&data, None, None).unwrap();
    assert!(r.epochs[29].loss < r.epochs[0].loss);
    let csv = r.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "epoch,loss,lr,seconds");
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn mismatched_pairs_are_rejected() {
    let model = Model::build(net()).unwrap();
    let lr = Tensor::zeros(&[1, 3, 8, 8]);
    let hr = Tensor::zeros(&[1, 3, 16, 15]);
    assert!(matches!(
        TrainSample::new("bad", &model, &lr, &hr),
        Err(Error::Dimension { axis: "width", .. })
    ));
    let mut t = Trainer::new(model, cfg(1)).unwrap();
    assert!(t.fit(&[], None, None).is_err());
}

#[test]
fn nan_validation_score_never_becomes_best() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::build(net()).unwrap();
    let train = samples(&model, 2, 3);
    let mut val = samples(&model, 1, 4);
    val[0].target.data_mut()[0] = f64::NAN;
    let mut t = Trainer::new(model, cfg(2)).unwrap();
    let report = t.fit(&train, Some(&val), Some(dir.path())).unwrap();
    assert!(report.epochs.iter().all(|e| e.val_psnr.unwrap().is_nan()));
    assert_eq!(t.best_val_psnr, None);
    assert!(!dir.path().join(BEST_CHECKPOINT).exists());
}
