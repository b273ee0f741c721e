//! Pixel and gradient-domain reconstruction losses.
//!
//! * `mse`: global mean of squared pixel differences.
//! * `sobel_maps`: horizontal/vertical Sobel responses and their magnitude.
//! * `mge`: mean squared difference between Sobel magnitudes.
//! * `mixge`: `mse + λ_G · mge`.
//!
//! All averages run over every `N·C·H·W` element, so colour channels are
//! reduced jointly.

use serde::{Deserialize, Serialize};

use crate::autograd::{PadMode, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default weight of the gradient term.
pub const DEFAULT_LAMBDA_G: f64 = 0.1;
/// Default stabiliser inside the magnitude square root.
pub const DEFAULT_SQRT_EPSILON: f64 = 1e-12;

/// The `Gx` kernel as conventionally printed (rows `[-1,-2,-1]`, `[0,0,0]`,
/// `[1,2,1]`); it responds to variation down the rows.
pub const SOBEL_GX: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
/// The `Gy` kernel as conventionally printed; it responds to variation
/// along the columns.
pub const SOBEL_GY: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    #[default]
    Mixge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mixge" => Ok(LossKind::Mixge),
            _ => Err(Error::Config(format!(
                "unknown loss '{s}' (expected mse or mixge)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_g: f64,
    pub sqrt_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Mixge,
            lambda_g: DEFAULT_LAMBDA_G,
            sqrt_epsilon: DEFAULT_SQRT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn mse() -> Self {
        LossConfig {
            kind: LossKind::Mse,
            ..Default::default()
        }
    }

    pub fn mixge(lambda_g: f64) -> Self {
        LossConfig {
            kind: LossKind::Mixge,
            lambda_g,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda_g.is_finite() || self.lambda_g < 0.0 {
            return Err(Error::Config(format!(
                "lambda_g must be finite and >= 0, got {}",
                self.lambda_g
            )));
        }
        if !self.sqrt_epsilon.is_finite() || self.sqrt_epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "sqrt_epsilon must be positive, got {}",
                self.sqrt_epsilon
            )));
        }
        Ok(())
    }

    /// Weight actually applied to the gradient term.
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            LossKind::Mse => 0.0,
            LossKind::Mixge => self.lambda_g,
        }
    }

    pub fn apply<'t>(&self, pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
        mixge(pred, target, self)
    }
}

/// Sobel responses of an image, all shaped like the input.
#[derive(Clone, Copy, Debug)]
pub struct GradientMap<'t> {
    pub gx: Var<'t>,
    pub gy: Var<'t>,
    pub magnitude: Var<'t>,
}

fn check_same(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::dim(
            op,
            "shape",
            format!("{sa:?}"),
            format!("{sb:?}"),
        ));
    }
    Ok(())
}

pub fn mse<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    check_same("mse", &pred, &target)?;
    pred.sub(target)?.square()?.mean_all()
}

/// Separable factors `(column, row)` of the 180°-rotated Sobel kernels, so
/// that cross-correlating with `column` then `row` is the true convolution
/// with the printed kernel. The difference factor runs first, which makes
/// the response of a constant field exactly zero.
const SOBEL_X_FACTORS: ([f64; 3], [f64; 3]) = ([1.0, 0.0, -1.0], [1.0, 2.0, 1.0]);
const SOBEL_Y_FACTORS: ([f64; 3], [f64; 3]) = ([1.0, 2.0, 1.0], [1.0, 0.0, -1.0]);

fn separable<'t>(
    tape: &'t Tape,
    planes: Var<'t>,
    (col, row): ([f64; 3], [f64; 3]),
) -> Result<Var<'t>> {
    let kc = tape.constant(&Tensor::new(&[1, 1, 3, 1], col.to_vec())?);
    let kr = tape.constant(&Tensor::new(&[1, 1, 1, 3], row.to_vec())?);
    let vertical = Padding {
        top: 1,
        bottom: 1,
        left: 0,
        right: 0,
    };
    let horizontal = Padding {
        top: 0,
        bottom: 0,
        left: 1,
        right: 1,
    };
    let (first, first_pad, second, second_pad) = if col[1] == 0.0 {
        (kc, vertical, kr, horizontal)
    } else {
        (kr, horizontal, kc, vertical)
    };
    planes
        .conv2d_padded(first, None, 1, first_pad, PadMode::Replicate)?
        .conv2d_padded(second, None, 1, second_pad, PadMode::Replicate)
}

/// Sobel gradient maps with replicate padding and same-size output.
///
/// Each channel is filtered independently. `magnitude = sqrt(gx² + gy² + eps)`.
pub fn sobel_maps<'t>(tape: &'t Tape, img: Var<'t>, eps: f64) -> Result<GradientMap<'t>> {
    let shape = img.shape();
    let [n, c, h, w] = shape[..] else {
        return Err(Error::dim("sobel_maps", "rank", 4, shape.len()));
    };
    if h == 0 || w == 0 {
        return Err(Error::dim("sobel_maps", "extent", ">= 1", 0));
    }
    let planes = img.reshape(&[n * c, 1, h, w])?;
    let gx = separable(tape, planes, SOBEL_X_FACTORS)?.reshape(&shape)?;
    let gy = separable(tape, planes, SOBEL_Y_FACTORS)?.reshape(&shape)?;
    let magnitude = gx.square()?.add(gy.square()?)?.sqrt_eps(eps)?;
    Ok(GradientMap { gx, gy, magnitude })
}

/// Mean Gradient Error: global mean of `(G − Ĝ)²` over Sobel magnitudes.
pub fn mge<'t>(pred: Var<'t>, target: Var<'t>, eps: f64) -> Result<Var<'t>> {
    check_same("mge", &pred, &target)?;
    let tape = pred.tape();
    let gp = sobel_maps(tape, pred, eps)?;
    let gt = sobel_maps(tape, target, eps)?;
    gp.magnitude.sub(gt.magnitude)?.square()?.mean_all()
}

/// `mse + λ_G · mge`. With a zero weight (or [`LossKind::Mse`]) this is
/// exactly `mse`.
pub fn mixge<'t>(pred: Var<'t>, target: Var<'t>, config: &LossConfig) -> Result<Var<'t>> {
    let lambda = config.effective_lambda();
    let base = mse(pred, target)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let grad_term = mge(pred, target, config.sqrt_epsilon)?;
    base.add(grad_term.scalar_mul(lambda)?)
}

/// Tape-free evaluation of MSE between two tensors.
pub fn mse_value(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    mse(tape.constant(pred), tape.constant(target))?.item()
}

/// Tape-free evaluation of MGE; `eps = 0` gives the exact magnitude.
pub fn mge_value(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64> {
    let tape = Tape::new();
    mge(tape.constant(pred), tape.constant(target), eps)?.item()
}
