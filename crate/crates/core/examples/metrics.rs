//! PSNR and SSIM on the 0..255 scale for a few degradations of one image.
//!
//! cargo run --release --example metrics -- [reference.png]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::metrics::{score_unit_range, SsimForm, SsimWindow};
use unetsr::pipeline::{bicubic_resize, synthetic, ImageBuf};
use unetsr::Tensor;

fn main() -> unetsr::Result<()> {
    let reference = match std::env::args().nth(1) {
        Some(p) => ImageBuf::open(p.as_ref())?.to_tensor(),
        None => {
            let t = synthetic::random_rectangles(64, 64, 8, &mut ChaCha8Rng::seed_from_u64(3));
            ImageBuf::from_tensor(&t)?.to_tensor()
        }
    };
    let (_, _, h, w) = reference.dims4("reference")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Tensor::rand_uniform(reference.shape(), -0.05, 0.05, &mut rng);
    let noisy = Tensor::new(
        reference.shape(),
        reference
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let cases = [
        ("identical", reference.clone()),
        ("one level brighter", reference.map(|v| v + 1.0 / 255.0)),
        ("uniform noise +-0.05", noisy),
        (
            "bicubic x2 round trip",
            bicubic_resize(&bicubic_resize(&reference, h / 2, w / 2)?, h, w)?,
        ),
        (
            "bicubic x4 round trip",
            bicubic_resize(&bicubic_resize(&reference, h / 4, w / 4)?, h, w)?,
        ),
    ];
    let cov = SsimWindow::default();
    let dev = SsimWindow::with_form(SsimForm::DeviationProduct);
    println!(
        "{:<24} {:>10} {:>10} {:>14}",
        "degradation", "psnr_db", "ssim", "ssim(dev-prod)"
    );
    for (name, img) in &cases {
        let img = ImageBuf::from_tensor(img)?.to_tensor();
        let (p, s) = score_unit_range(&reference, &img, &cov)?;
        let (_, s2) = score_unit_range(&reference, &img, &dev)?;
        println!("{name:<24} {p:>10.3} {s:>10.5} {s2:>14.5}");
    }
    Ok(())
}
