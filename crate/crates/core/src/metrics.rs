//! PSNR and SSIM on the `[0, 255]` value scale, averaged jointly over RGB.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;

/// `10·log10(255² / MSE)`; `+∞` when the images are identical.
pub fn psnr(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    if y.shape() != yhat.shape() {
        return Err(Error::dim(
            "psnr",
            "shape",
            format!("{:?}", y.shape()),
            format!("{:?}", yhat.shape()),
        ));
    }
    if y.is_empty() {
        return Err(Error::Contract("psnr of an empty image".into()));
    }
    let sq: Vec<f64> = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (b - a) * (b - a))
        .collect();
    let mse = pairwise_sum(&sq) / sq.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Which form of the structure term the SSIM uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsimForm {
    /// `2σ_xy + c2` with the windowed covariance.
    #[default]
    Covariance,
    /// `2σ_x·σ_y + c2`, the product of the two deviations.
    DeviationProduct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
    pub form: SsimForm,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow {
            size: 11,
            sigma: 1.5,
            form: SsimForm::Covariance,
        }
    }
}

impl SsimWindow {
    pub fn with_form(form: SsimForm) -> Self {
        SsimWindow {
            form,
            ..Default::default()
        }
    }

    /// Normalised 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Valid-mode separable filtering of one `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn planes(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape()[..] {
        [n, c, h, w] => Ok((n * c, h, w)),
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        _ => Err(Error::dim(op, "rank", "2, 3 or 4", t.shape().len())),
    }
}

/// Mean SSIM over every window position of every plane.
pub fn ssim(y: &Tensor, yhat: &Tensor, window: &SsimWindow) -> Result<f64> {
    if y.shape() != yhat.shape() {
        return Err(Error::dim(
            "ssim",
            "shape",
            format!("{:?}", y.shape()),
            format!("{:?}", yhat.shape()),
        ));
    }
    let (np, h, w) = planes(y, "ssim")?;
    if h < window.size || w < window.size || window.size == 0 {
        return Err(Error::Contract(format!(
            "ssim: image {h}x{w} is smaller than the {0}x{0} window",
            window.size
        )));
    }
    let taps = window.taps();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let plane = h * w;
    let mut scores = Vec::new();
    for p in 0..np {
        let a = &y.data()[p * plane..(p + 1) * plane];
        let b = &yhat.data()[p * plane..(p + 1) * plane];
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(b).map(|(u, v)| u * v).collect();
        let mu_a = filter_valid(a, h, w, &taps);
        let mu_b = filter_valid(b, h, w, &taps);
        let e_aa = filter_valid(&aa, h, w, &taps);
        let e_bb = filter_valid(&bb, h, w, &taps);
        let e_ab = filter_valid(&ab, h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = (e_aa[i] - ma * ma).max(0.0);
            let vb = (e_bb[i] - mb * mb).max(0.0);
            let structure = match window.form {
                SsimForm::Covariance => e_ab[i] - ma * mb,
                SsimForm::DeviationProduct => va.sqrt() * vb.sqrt(),
            };
            let num = (2.0 * ma * mb + c1) * (2.0 * structure + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            scores.push(num / den);
        }
    }
    Ok(pairwise_sum(&scores) / scores.len() as f64)
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// PSNR and SSIM of `[0, 1]` tensors, rescaled to `[0, 255]` without rounding.
pub fn score_unit_range(y: &Tensor, yhat: &Tensor, window: &SsimWindow) -> Result<(f64, f64)> {
    let ys = y.map(|v| v * PEAK);
    let ps = yhat.map(|v| v * PEAK);
    Ok((psnr(&ys, &ps)?, ssim(&ys, &ps, window)?))
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub path: String,
    pub scale: u32,
    #[serde(serialize_with = "ser_psnr")]
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Dataset means; PSNR is `"inf"` in JSON if any image matched exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub count: usize,
    #[serde(serialize_with = "ser_psnr")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
}

impl MetricReport {
    pub fn push(&mut self, score: ImageScore) {
        self.images.push(score);
    }

    pub fn summary(&self) -> MetricSummary {
        let n = self.images.len().max(1) as f64;
        let p: Vec<f64> = self.images.iter().map(|s| s.psnr_db).collect();
        let s: Vec<f64> = self.images.iter().map(|s| s.ssim).collect();
        MetricSummary {
            count: self.images.len(),
            mean_psnr_db: pairwise_sum(&p) / n,
            mean_ssim: pairwise_sum(&s) / n,
        }
    }

    /// Per-image rows: `path,scale,psnr_db,ssim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,scale,psnr_db,ssim\n");
        for s in &self.images {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                csv_field(&s.path),
                s.scale,
                fmt_psnr(s.psnr_db),
                s.ssim
            );
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(json_path, self.summary_json()? + "\n").map_err(|e| Error::io(json_path, e))
    }
}

/// Parses a `psnr_db` CSV cell, accepting the `inf` sentinel.
pub fn parse_psnr(cell: &str) -> Option<f64> {
    match cell {
        "inf" => Some(f64::INFINITY),
        _ => cell.parse().ok(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
