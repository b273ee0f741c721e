//! Sobel gradient maps of an image and the gradient loss between an image
//! and a blurred copy.
//!
//! cargo run --release --example sobel_edges -- [image.png] [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::loss::{mge_value, mse_value, sobel_maps, DEFAULT_SQRT_EPSILON};
use unetsr::pipeline::{bicubic_resize, synthetic, ImageBuf};
use unetsr::{Tape, Tensor};

fn normalised(t: &Tensor) -> Tensor {
    let max = t
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    t.map(|v| v.abs() / max)
}

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let img = match args.next() {
        Some(p) => ImageBuf::open(p.as_ref())?.to_tensor(),
        None => synthetic::random_rectangles(96, 96, 10, &mut ChaCha8Rng::seed_from_u64(1)),
    };
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "sobel_out".into()));
    let (_, _, h, w) = img.dims4("input")?;

    let tape = Tape::new();
    let maps = sobel_maps(&tape, tape.constant(&img), DEFAULT_SQRT_EPSILON)?;
    for (name, t) in [
        ("gx", maps.gx.value()),
        ("gy", maps.gy.value()),
        ("magnitude", maps.magnitude.value()),
    ] {
        let path = out_dir.join(format!("{name}.png"));
        ImageBuf::from_tensor(&normalised(&t))?.save_png(&path)?;
        println!("wrote {}", path.display());
    }

    // a down-up bicubic round trip softens edges; MGE sees it more than MSE
    let blurred = bicubic_resize(&bicubic_resize(&img, h / 2, w / 2)?, h, w)?;
    println!("MSE(img, blurred) = {:.4e}", mse_value(&img, &blurred)?);
    println!(
        "MGE(img, blurred) = {:.4e}",
        mge_value(&img, &blurred, DEFAULT_SQRT_EPSILON)?
    );
    println!(
        "MGE(img, img)     = {:.4e}",
        mge_value(&img, &img, DEFAULT_SQRT_EPSILON)?
    );
    Ok(())
}
