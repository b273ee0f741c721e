//! Overfits a depth-2 ×2 model to one synthetic 32→64 pair and compares the
//! result with plain bicubic upscaling.
//!
//! cargo run --release --example overfit_toy -- [epochs] [seed] [lr0] [rects]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::loss::LossConfig;
use unetsr::metrics::{psnr, PEAK};
use unetsr::model::{Model, NetConfig};
use unetsr::pipeline::{bicubic_resize, synthetic};
use unetsr::train::{predict, TrainConfig, TrainSample, Trainer};

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: u64 = args.next().map_or(200, |a| a.parse().expect("epochs"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));
    let lr0: f64 = args.next().map_or(1e-3, |a| a.parse().expect("lr0"));
    let rects: usize = args.next().map_or(12, |a| a.parse().expect("rects"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hr = synthetic::random_rectangles(64, 64, rects, &mut rng);
    let lr = synthetic::downscale_pair(&hr, 2)?;

    let net = NetConfig {
        seed,
        ..NetConfig::new(2, 2, 16)
    };
    let model = Model::build(net)?;
    println!(
        "model: depth 2, x2, base width 16, {} parameters",
        model.param_count()
    );
    let sample = TrainSample::new("toy", &model, &lr, &hr)?;
    let cfg = TrainConfig {
        epochs,
        seed,
        lr0,
        loss: LossConfig::mixge(0.1),
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, cfg)?;
    let start = std::time::Instant::now();
    let report = trainer.fit(std::slice::from_ref(&sample), None, None)?;

    let first = report.epochs[0].loss;
    let last = report.epochs.last().expect("at least one epoch").loss;
    let scaled = |t: &unetsr::Tensor| t.map(|v| v.clamp(0.0, 1.0) * PEAK);
    let sr = predict(&trainer.model, &sample.input)?;
    let bic = bicubic_resize(&lr, 64, 64)?;
    let p_model = psnr(&scaled(&hr), &scaled(&sr))?;
    let p_bic = psnr(&scaled(&hr), &scaled(&bic))?;
    for r in report.epochs.iter().step_by(25) {
        println!("epoch {:>3}  loss {:.4e}  lr {:.2e}", r.epoch, r.loss, r.lr);
    }
    println!(
        "epoch-1 loss {first:.4e}, final loss {last:.4e}, ratio {:.4}",
        last / first
    );
    println!(
        "PSNR model {p_model:.2} dB, bicubic {p_bic:.2} dB, gain {:.2} dB",
        p_model - p_bic
    );
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
