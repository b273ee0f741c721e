//! Trains one model per U-net depth on synthetic pairs and prints the
//! held-out PSNR next to the parameter count.
//!
//! cargo run --release --example depth_sweep -- [epochs] [max_depth]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::model::NetConfig;
use unetsr::pipeline::synthetic;
use unetsr::train::{sweep_depth, DepthRow, RawPair, TrainConfig};

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
    let mut args = std::env::args().skip(1);
    let epochs: u64 = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let max_depth: usize = args.next().map_or(4, |a| a.parse().expect("max_depth"));

    let train = rect_pairs(1, 12)?;
    let test = rect_pairs(2, 6)?;
    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let depths: Vec<usize> = (1..=max_depth).collect();
    let rows = sweep_depth(&depths, &NetConfig::new(1, 2, 8), &cfg, &train, &test)?;
    print!("{}", DepthRow::to_csv(&rows));
    Ok(())
}
