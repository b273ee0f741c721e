//! Trains with several gradient-loss weights (0 = plain MSE) and reports
//! held-out PSNR and gradient error for each.
//!
//! cargo run --release --example lambda_sweep -- [epochs]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::model::NetConfig;
use unetsr::pipeline::synthetic;
use unetsr::train::{sweep_lambda, LambdaRow, RawPair, TrainConfig};

fn rect_pairs(seed: u64, n: usize) -> unetsr::Result<Vec<RawPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let hr = synthetic::random_rectangles(32, 32, 6, &mut rng);
            Ok((format!("r{i}"), synthetic::downscale_pair(&hr, 2)?, hr))
        })
        .collect()
}

fn main() -> unetsr::Result<()> {
    let epochs: u64 = std::env::args()
        .nth(1)
        .map_or(30, |a| a.parse().expect("epochs"));
    let train = rect_pairs(100, 20)?;
    let test = rect_pairs(200, 10)?;
    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let rows = sweep_lambda(
        &[0.0, 1e-3, 1e-2, 1e-1, 1.0],
        &NetConfig::new(2, 2, 8),
        &cfg,
        &train,
        &test,
    )?;
    print!("{}", LambdaRow::to_csv(&rows));
    Ok(())
}
