//! Builds an LR/HR pair set from a directory of images, then reports how
//! far bicubic upscaling of each LR image is from its HR target.
//!
//! cargo run --release --example bicubic_pairs -- <src_dir> <out_dir> [scale] [target]

use std::path::PathBuf;

use unetsr::metrics::{score_unit_range, SsimWindow};
use unetsr::pipeline::{bicubic_resize, make_pairs, ImageBuf};

fn main() -> unetsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(src), Some(out)) = (args.next(), args.next()) else {
        eprintln!("usage: bicubic_pairs <src_dir> <out_dir> [scale=2] [target=224]");
        std::process::exit(2);
    };
    let scale: u32 = args.next().map_or(2, |a| a.parse().expect("scale"));
    let target: usize = args.next().map_or(224, |a| a.parse().expect("target"));

    let manifest = make_pairs(&PathBuf::from(src), &PathBuf::from(&out), scale, target)?;
    println!(
        "{} pairs, manifest in {}",
        manifest.len(),
        manifest.base_dir.display()
    );
    let window = SsimWindow::default();
    for e in &manifest.entries {
        let hr = ImageBuf::open(&manifest.resolve(&e.hr))?;
        let lr = ImageBuf::open(&manifest.resolve(&e.lr))?;
        let up = ImageBuf::from_tensor(&bicubic_resize(&lr.to_tensor(), hr.height, hr.width)?)?;
        let (p, s) = score_unit_range(&hr.to_tensor(), &up.to_tensor(), &window)?;
        println!(
            "{:<32} {}x{} -> {}x{}  bicubic psnr {p:.2} dB  ssim {s:.4}",
            e.lr, lr.width, lr.height, hr.width, hr.height
        );
    }
    Ok(())
}
