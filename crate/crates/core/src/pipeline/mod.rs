//! Image files, resampling, and LR/HR training pairs.

mod bicubic;
mod pairs;
pub mod synthetic;

use std::path::{Path, PathBuf};

pub use bicubic::{axis_taps, bicubic_resize, cubic, Taps, CUBIC_A};
pub use pairs::{make_pairs, PairEntry, PairManifest, MANIFEST_NAME};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Decoded 8-bit RGB raster, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub source_path: Option<PathBuf>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::dim(
                "ImageBuf",
                "pixels",
                height * width * 3,
                pixels.len(),
            ));
        }
        if height == 0 || width == 0 {
            return Err(Error::Contract("ImageBuf: extents must be positive".into()));
        }
        Ok(ImageBuf {
            height,
            width,
            pixels,
            source_path: None,
        })
    }

    /// Decodes PNG, JPEG or BMP into RGB.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut buf = ImageBuf::new(h as usize, w as usize, rgb.into_raw())?;
        buf.source_path = Some(path.to_path_buf());
        Ok(buf)
    }

    /// Encodes as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// `1×3×H×W` tensor with values `pixel / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let (c, rest) = (i / (h * w), i % (h * w));
            f64::from(self.pixels[rest * 3 + c]) / 255.0
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for a single image:
    /// clamps to `[0, 1]`, scales by 255 and rounds half away from zero.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4("from_tensor")?;
        if n != 1 {
            return Err(Error::dim("from_tensor", "batch", 1, n));
        }
        if c != 3 {
            return Err(Error::dim("from_tensor", "channels", 3, c));
        }
        let mut pixels = vec![0u8; h * w * 3];
        for ch in 0..3 {
            for i in 0..h * w {
                pixels[i * 3 + ch] = quantize(t.data()[ch * h * w + i]);
            }
        }
        ImageBuf::new(h, w, pixels)
    }

    /// Bicubic resize through the float domain, re-quantised to 8 bits.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        ImageBuf::from_tensor(&bicubic_resize(&self.to_tensor(), out_h, out_w)?)
    }
}

/// `[0, 1]` float to 8-bit; `f64::round` rounds half away from zero.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Pads the bottom and right edges by replication so both spatial extents
/// become multiples of `multiple`. Returns the padded tensor and the
/// original `(h, w)`.
pub fn pad_to_multiple(x: &Tensor, multiple: usize) -> Result<(Tensor, (usize, usize))> {
    let (n, c, h, w) = x.dims4("pad_to_multiple")?;
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return Ok((x.clone(), (h, w)));
    }
    let out = Tensor::from_fn(&[n, c, ph, pw], |i| {
        let plane = i / (ph * pw);
        let y = ((i % (ph * pw)) / pw).min(h - 1);
        let xx = (i % pw).min(w - 1);
        x.data()[plane * h * w + y * w + xx]
    });
    Ok((out, (h, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_lossless() {
        let pixels: Vec<u8> = (0..4 * 5 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageBuf::new(4, 5, pixels).unwrap();
        let back = ImageBuf::from_tensor(&img.to_tensor()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn quantize_clamps_and_rounds() {
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn tensor_layout_is_planar() {
        let img = ImageBuf::new(1, 2, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let t = img.to_tensor();
        let got: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(got, vec![10, 40, 20, 50, 30, 60]);
    }

    #[test]
    fn pad_replicates_edges() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let (p, orig) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(orig, (3, 3));
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            p.data(),
            &[0., 1., 2., 2., 3., 4., 5., 5., 6., 7., 8., 8., 6., 7., 8., 8.]
        );
        let (same, _) = pad_to_multiple(&p, 4).unwrap();
        assert_eq!(same, p);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/x.png");
        let img = ImageBuf::new(3, 2, (0..18).map(|i| i as u8 * 13).collect()).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageBuf::open(&path).unwrap();
        assert_eq!(back.pixels, img.pixels);
        assert_eq!((back.height, back.width), (3, 2));
    }
}
