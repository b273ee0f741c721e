//! Raw numeric kernels behind the differentiable ops.
//!
//! Every kernel computes each output element on a single thread with a fixed
//! reduction order, so results are bit-identical for any thread count.

use rayon::prelude::*;

/// Below this many multiply-adds the matmuls stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// Padding applied around the input plane before a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// How out-of-range samples are filled during convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    #[default]
    Zero,
    /// Clamp to the nearest edge pixel.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Padding,
    pub mode: PadMode,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Rows of the column matrix (`cin·kh·kw`).
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Maps a padded coordinate back into the source plane, or `None` for
    /// a zero-padded sample.
    #[inline]
    fn source(&self, pos: isize, extent: usize) -> Option<usize> {
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            match self.mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(pos.clamp(0, extent as isize - 1) as usize),
            }
        }
    }
}

/// Unfolds one `cin×h×w` image into a `patch_len × out_plane` matrix.
pub fn im2col(input: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad.top as isize;
                    let sy = g.source(iy, g.h);
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad.left as isize;
                        dst[oy * g.ow + ox] = match (sy, g.source(ix, g.w)) {
                            (Some(y), Some(x)) => src[y * g.w + x],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image,
/// accumulating into clamped positions under replicate padding.
pub fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let dst = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad.top as isize;
                    let Some(y) = g.source(iy, g.h) else { continue };
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad.left as isize;
                        if let Some(x) = g.source(ix, g.w) {
                            dst[y * g.w + x] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, all row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, o): (usize, &mut [f64])| {
        o.iter_mut().for_each(|v| *v = 0.0);
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if m * k * n < PAR_THRESHOLD {
        out.chunks_mut(n).enumerate().for_each(row);
    } else {
        out.par_chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let row = |(i, o): (usize, &mut [f64])| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, ov) in o.iter_mut().enumerate() {
            *ov += dot(ar, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n < PAR_THRESHOLD {
        out.chunks_mut(n).enumerate().for_each(row);
    } else {
        out.par_chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`.
pub fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let row = |(i, o): (usize, &mut [f64])| {
        o.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[p * m + i];
            let br = &b[p * n..(p + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if m * k * n < PAR_THRESHOLD {
        out.chunks_mut(n).enumerate().for_each(row);
    } else {
        out.par_chunks_mut(n).enumerate().for_each(row);
    }
}

/// Four-lane dot product with a fixed summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// 2×2 stride-2 max pooling over `planes` planes of `h×w`.
/// Returns the pooled values and, per output, the flat input index of the
/// winning element (first in scan order on ties).
pub fn maxpool2x2(input: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + (2 * oy) * w + 2 * ox;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub fn upsample_nearest2x(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let sr = &src[(y / 2) * w..(y / 2 + 1) * w];
            for x in 0..ow {
                dst[y * ow + x] = sr[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_nearest2x`]: sums each 2×2 block.
pub fn upsample_nearest2x_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ow = 2 * w;
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = (2 * y) * ow + 2 * x;
                out[p * h * w + y * w + x] = src[i] + src[i + 1] + src[i + ow] + src[i + ow + 1];
            }
        }
    }
    out
}
