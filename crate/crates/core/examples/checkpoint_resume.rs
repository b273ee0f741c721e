//! Interrupts a training run, resumes it from the saved checkpoint and
//! checks the result against an uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::model::{Checkpoint, Model, NetConfig};
use unetsr::pipeline::synthetic;
use unetsr::train::{TrainConfig, TrainSample, Trainer, LATEST_CHECKPOINT};

fn samples(model: &Model) -> unetsr::Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..4)
        .map(|i| {
            let hr = synthetic::random_rectangles(24, 24, 5, &mut rng);
            let lr = synthetic::downscale_pair(&hr, 2)?;
            TrainSample::new(format!("s{i}"), model, &lr, &hr)
        })
        .collect()
}

fn main() -> unetsr::Result<()> {
    let net = NetConfig {
        seed: 1,
        ..NetConfig::new(2, 2, 4)
    };
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 2,
        seed: 1,
        ..Default::default()
    };
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();

    let model = Model::build(net.clone())?;
    let data = samples(&model)?;
    let mut straight = Trainer::new(model, cfg.clone())?;
    straight.fit(&data, None, None)?;

    let model = Model::build(net)?;
    let mut first = Trainer::new(
        model,
        TrainConfig {
            epochs: 5,
            ..cfg.clone()
        },
    )?;
    first.fit(&data, None, Some(dir))?;
    let path = dir.join(LATEST_CHECKPOINT);
    let ck = Checkpoint::load(&path)?;
    println!(
        "saved {} after epoch {} (lr {:e})",
        path.display(),
        ck.epoch,
        ck.lr
    );

    let mut resumed = Trainer::from_checkpoint(&ck, cfg)?;
    let report = resumed.fit(&data, None, Some(dir))?;
    println!(
        "resumed for epochs {}..={}",
        report.epochs[0].epoch,
        report.epochs.last().map_or(0, |e| e.epoch)
    );

    let same = resumed.checkpoint().to_bytes()? == straight.checkpoint().to_bytes()?;
    println!("resumed run matches the uninterrupted run bit-for-bit: {same}");
    assert!(same);
    Ok(())
}
