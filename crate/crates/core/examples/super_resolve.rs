//! Upscales an image with a trained checkpoint and with bicubic, writing
//! both side by side.
//!
//! cargo run --release --example super_resolve -- <model.usrc> <input.png> [out_dir]

use std::path::PathBuf;

use unetsr::model::Checkpoint;
use unetsr::pipeline::{bicubic_resize, ImageBuf};

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(ckpt), Some(input)) = (args.next(), args.next()) else {
        eprintln!("usage: super_resolve <model.usrc> <input.png> [out_dir]");
        std::process::exit(2);
    };
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let ck = Checkpoint::load(ckpt.as_ref())?;
    let model = ck.model()?;
    let img = ImageBuf::open(input.as_ref())?;
    let r = model.config.scale;
    println!(
        "x{r} model, depth {}, {} parameters, trained {} epochs",
        model.config.depth,
        model.param_count(),
        ck.epoch
    );

    let start = std::time::Instant::now();
    let sr = ImageBuf::from_tensor(&model.super_resolve(&img.to_tensor())?)?;
    let secs = start.elapsed().as_secs_f64();
    let bic = ImageBuf::from_tensor(&bicubic_resize(
        &img.to_tensor(),
        img.height * r,
        img.width * r,
    )?)?;
    let (sr_path, bic_path) = (out_dir.join("sr.png"), out_dir.join("bicubic.png"));
    sr.save_png(&sr_path)?;
    bic.save_png(&bic_path)?;
    println!(
        "{}x{} -> {}x{} in {secs:.2} s: {} and {}",
        img.width,
        img.height,
        sr.width,
        sr.height,
        sr_path.display(),
        bic_path.display()
    );
    Ok(())
}
