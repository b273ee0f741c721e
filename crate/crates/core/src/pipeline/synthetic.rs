//! Procedural hard-edged images for desk-scale experiments.

use rand::Rng;

use super::bicubic_resize;
use crate::autograd::Tensor;
use crate::error::Result;

/// `1×3×h×w` image in `[0, 1]`: a random background colour overlaid with
/// `rects` axis-aligned rectangles of random colour.
pub fn random_rectangles<R: Rng + ?Sized>(h: usize, w: usize, rects: usize, rng: &mut R) -> Tensor {
    let mut img = Tensor::zeros(&[1, 3, h, w]);
    let bg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    for (plane, v) in img.data_mut().chunks_mut(h * w).zip(bg) {
        plane.fill(v);
    }
    for _ in 0..rects {
        let y0 = rng.random_range(0..h);
        let x0 = rng.random_range(0..w);
        let y1 = rng.random_range(y0 + 1..=h);
        let x1 = rng.random_range(x0 + 1..=w);
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for (plane, v) in img.data_mut().chunks_mut(h * w).zip(color) {
            for y in y0..y1 {
                plane[y * w + x0..y * w + x1].fill(v);
            }
        }
    }
    img
}

/// Bicubic-downscaled LR partner of an HR tensor.
pub fn downscale_pair(hr: &Tensor, scale: usize) -> Result<Tensor> {
    let (_, _, h, w) = hr.dims4("downscale_pair")?;
    bicubic_resize(hr, h / scale, w / scale)
}
