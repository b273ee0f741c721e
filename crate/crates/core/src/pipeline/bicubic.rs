//! Separable bicubic resampling.
//!
//! Cubic convolution kernel with `a = -0.5`, pixel-centre alignment,
//! edge-clamped sampling, and an anti-aliasing kernel widened by the
//! scale factor when shrinking. Weights for every output position are
//! renormalised to sum to one.

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

/// The cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source indices (already clamped) and weights for one output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Per-output taps for resampling an axis of `in_len` samples to `out_len`.
pub fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in lo..=hi {
                let w = cubic((j as f64 + 0.5 - center) / stretch);
                if w != 0.0 {
                    index.push(j.clamp(0, in_len as isize - 1) as usize);
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Resizes every plane of an `N×C×H×W` tensor to `out_h × out_w`.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!(
            "bicubic_resize: target extent {out_h}x{out_w} must be positive"
        )));
    }
    let (n, c, h, w) = img.dims4("bicubic_resize")?;
    if h == 0 || w == 0 {
        return Err(Error::Contract("bicubic_resize: empty source image".into()));
    }
    let tx = axis_taps(w, out_w);
    let ty = axis_taps(h, out_h);
    let mut out = vec![0.0; n * c * out_h * out_w];
    let mut rows = vec![0.0; h * out_w];
    for p in 0..n * c {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let sr = &src[y * w..(y + 1) * w];
            for (x, t) in tx.iter().enumerate() {
                rows[y * out_w + x] = t
                    .index
                    .iter()
                    .zip(&t.weight)
                    .map(|(&j, wt)| wt * sr[j])
                    .sum();
            }
        }
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (y, t) in ty.iter().enumerate() {
            let dr = &mut dst[y * out_w..(y + 1) * out_w];
            for (&j, wt) in t.index.iter().zip(&t.weight) {
                let sr = &rows[j * out_w..(j + 1) * out_w];
                for (d, s) in dr.iter_mut().zip(sr) {
                    *d += wt * s;
                }
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}
