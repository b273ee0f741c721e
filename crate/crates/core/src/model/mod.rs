//! The modified U-net.
//!
//! Layout for depth `D` and scale `r = 2^k`, with encoder widths
//! `w_d = min(base_width · 2^d, width_cap)`:
//!
//! ```text
//! encoder  d = 0..D     conv3×3 → ReLU → (skip_d) → maxpool 2×2
//! bottleneck            conv3×3 → ReLU                       (w_D channels)
//! decoder  d = D-1..0   upsample ×2 → conv2×2 (→ w_d) → concat[skip_d, ·] → conv3×3 → ReLU
//! head     s = 0..k     upsample ×2 → conv3×3 → ReLU
//!                       bicubic(x, 2^(s+1)) → conv3×3 → ReLU
//!                       concat → conv3×3 → ReLU
//! output                conv3×3 → 3 channels, linear
//! ```
//!
//! There is no batch normalisation anywhere, so the forward map of a fixed
//! parameter set is deterministic and has no train/eval distinction.

mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::ParamSet;

use crate::autograd::{PadMode, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pipeline::{bicubic_resize, pad_to_multiple};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Number of encoder downscale stages.
    pub depth: usize,
    /// Magnification factor: 2, 4 or 8.
    pub scale: usize,
    pub in_channels: usize,
    pub base_width: usize,
    pub width_cap: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 5,
            scale: 2,
            in_channels: 3,
            base_width: 64,
            width_cap: 512,
            kernel: 3,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn new(depth: usize, scale: usize, base_width: usize) -> Self {
        NetConfig {
            depth,
            scale,
            base_width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.depth > 16 {
            return Err(Error::Config(format!(
                "depth {} is unreasonably large",
                self.depth
            )));
        }
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "scale must be 2, 4 or 8, got {}",
                self.scale
            )));
        }
        if self.in_channels != 3 {
            return Err(Error::Config(format!(
                "in_channels must be 3 (RGB), got {}",
                self.in_channels
            )));
        }
        if self.kernel != 3 {
            return Err(Error::Config(format!(
                "kernel must be 3, got {}",
                self.kernel
            )));
        }
        if self.base_width == 0 || self.width_cap == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Number of ×2 stages in the super-resolution head, `log2(scale)`.
    pub fn head_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Channel width at encoder level `d` (level `depth` is the bottleneck).
    pub fn width(&self, d: usize) -> usize {
        let w = self
            .base_width
            .saturating_mul(1usize.checked_shl(d as u32).unwrap_or(usize::MAX));
        w.min(self.width_cap)
    }

    pub fn head_width(&self) -> usize {
        self.width(0)
    }

    /// Spatial extents of the input must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// One convolution of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub params: usize,
}

impl LayerSpec {
    fn conv(name: String, cin: usize, cout: usize, k: usize) -> Self {
        LayerSpec {
            name,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            params: cout * cin * k * k + cout,
        }
    }
}

/// Every convolution in evaluation order.
pub fn layer_table(cfg: &NetConfig) -> Vec<LayerSpec> {
    let k = cfg.kernel;
    let d = cfg.depth;
    let mut layers = Vec::new();
    for level in 0..d {
        let cin = if level == 0 {
            cfg.in_channels
        } else {
            cfg.width(level - 1)
        };
        layers.push(LayerSpec::conv(
            format!("enc{level}.conv"),
            cin,
            cfg.width(level),
            k,
        ));
    }
    layers.push(LayerSpec::conv(
        "bottleneck.conv".into(),
        cfg.width(d - 1),
        cfg.width(d),
        k,
    ));
    for level in (0..d).rev() {
        let w = cfg.width(level);
        layers.push(LayerSpec::conv(
            format!("dec{level}.up"),
            cfg.width(level + 1),
            w,
            2,
        ));
        layers.push(LayerSpec::conv(format!("dec{level}.conv"), 2 * w, w, k));
    }
    let h = cfg.head_width();
    for s in 0..cfg.head_stages() {
        layers.push(LayerSpec::conv(format!("head{s}.up"), h, h, k));
        layers.push(LayerSpec::conv(
            format!("head{s}.pyr"),
            cfg.in_channels,
            h,
            k,
        ));
        layers.push(LayerSpec::conv(format!("head{s}.fuse"), 2 * h, h, k));
    }
    layers.push(LayerSpec::conv("out.conv".into(), h, cfg.in_channels, k));
    layers
}

/// Closed-form parameter count.
pub fn param_count(cfg: &NetConfig) -> usize {
    let k2 = cfg.kernel * cfg.kernel;
    let c = cfg.in_channels;
    let d = cfg.depth;
    let w = |l: usize| cfg.width(l);
    let mut total = k2 * c * w(0) + w(0);
    total += (1..=d).map(|l| k2 * w(l - 1) * w(l) + w(l)).sum::<usize>();
    total += (0..d)
        .map(|l| (4 * w(l + 1) * w(l) + w(l)) + (k2 * 2 * w(l) * w(l) + w(l)))
        .sum::<usize>();
    let h = cfg.head_width();
    total += cfg.head_stages() * ((k2 * h * h + h) + (k2 * c * h + h) + (k2 * 2 * h * h + h));
    total + k2 * h * c + c
}

/// Network input plus its bicubic upscales at every head scale.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    /// Input padded to a multiple of `2^depth`.
    pub input: Tensor,
    /// `pyramid[s]` is the padded input upscaled by `2^(s+1)`.
    pub pyramid: Vec<Tensor>,
    /// Extents before padding.
    pub original: (usize, usize),
}

impl PreparedInput {
    /// Pads `x` (replicate, bottom/right) and builds the pyramid.
    pub fn new(cfg: &NetConfig, x: &Tensor) -> Result<Self> {
        let (padded, original) = pad_to_multiple(x, cfg.input_multiple())?;
        let pyramid = bicubic_pyramid(&padded, cfg.scale)?;
        Ok(PreparedInput {
            input: padded,
            pyramid,
            original,
        })
    }
}

/// Bicubic upscales of `x` by 2, 4, … up to `scale`.
pub fn bicubic_pyramid(x: &Tensor, scale: usize) -> Result<Vec<Tensor>> {
    let (_, _, h, w) = x.dims4("bicubic_pyramid")?;
    let stages = scale.trailing_zeros() as usize;
    (1..=stages)
        .map(|s| bicubic_resize(x, h << s, w << s))
        .collect()
}

/// A built network: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Model {
    /// Builds the network with freshly initialised parameters.
    pub fn build(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(&config, config.seed);
        Ok(Model { config, params })
    }

    pub fn from_params(config: NetConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = ParamSet::shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::dim(
                "Model",
                "parameter count",
                expected.len(),
                params.len(),
            ));
        }
        for ((name, shape), (pn, pt)) in expected.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(Error::Corrupt {
                    what: "parameter set".into(),
                    reason: format!("expected {name} {shape:?}, found {pn} {:?}", pt.shape()),
                });
            }
        }
        Ok(Model { config, params })
    }

    pub fn encoder_stages(&self) -> usize {
        self.config.depth
    }

    pub fn decoder_stages(&self) -> usize {
        self.config.depth
    }

    pub fn head_stages(&self) -> usize {
        self.config.head_stages()
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    /// Records every parameter as a gradient-tracking leaf, in order.
    pub fn attach<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf(&t.clone().with_requires_grad(true)))
            .collect()
    }

    /// Records every parameter as a constant.
    pub fn attach_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|(_, t)| tape.constant(t)).collect()
    }

    /// Runs the network on a prepared input and crops the result to
    /// `scale × original` extents.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        input: &PreparedInput,
    ) -> Result<Var<'t>> {
        let x = tape.constant(&input.input);
        let pyramid: Vec<Var<'t>> = input.pyramid.iter().map(|p| tape.constant(p)).collect();
        let out = self.forward_raw(params, x, &pyramid)?;
        let r = self.config.scale;
        let (h, w) = input.original;
        let shape = out.shape();
        if shape[2] == r * h && shape[3] == r * w {
            return Ok(out);
        }
        out.crop(0, 0, r * h, r * w)
    }

    /// Runs the network on an input whose extents are already multiples of
    /// `2^depth`, with a caller-supplied pyramid.
    pub fn forward_raw<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        pyramid: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let cfg = &self.config;
        if params.len() != self.params.len() {
            return Err(Error::dim(
                "forward",
                "parameters",
                self.params.len(),
                params.len(),
            ));
        }
        let shape = x.shape();
        let [_, c, h, w] = shape[..] else {
            return Err(Error::dim("forward", "rank", 4, shape.len()));
        };
        if c != cfg.in_channels {
            return Err(Error::dim("forward", "channels", cfg.in_channels, c));
        }
        let m = cfg.input_multiple();
        if h % m != 0 {
            return Err(Error::dim(
                "forward",
                "height",
                format!("multiple of {m}"),
                h,
            ));
        }
        if w % m != 0 {
            return Err(Error::dim(
                "forward",
                "width",
                format!("multiple of {m}"),
                w,
            ));
        }
        if pyramid.len() != cfg.head_stages() {
            return Err(Error::dim(
                "forward",
                "pyramid levels",
                cfg.head_stages(),
                pyramid.len(),
            ));
        }
        for (s, p) in pyramid.iter().enumerate() {
            let ps = p.shape();
            let want = [shape[0], c, h << (s + 1), w << (s + 1)];
            if ps != want {
                return Err(Error::dim(
                    "forward",
                    "pyramid level",
                    format!("{want:?}"),
                    format!("{ps:?}"),
                ));
            }
        }

        let mut p = params.iter().copied();
        let mut next = || -> (Var<'t>, Var<'t>) {
            let w = p.next().expect("parameter list checked above");
            let b = p.next().expect("parameter list checked above");
            (w, b)
        };
        let conv3 =
            |v: Var<'t>, (w, b): (Var<'t>, Var<'t>)| v.conv2d(w, Some(b), 1, 1, PadMode::Zero);

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut cur = x;
        for _ in 0..cfg.depth {
            let f = conv3(cur, next())?.relu()?;
            skips.push(f);
            cur = f.maxpool2x2()?;
        }
        cur = conv3(cur, next())?.relu()?;
        // 2×2 conv on the upsampled map; one extra replicated row/column at
        // the bottom/right keeps the extent unchanged.
        let up_pad = Padding {
            top: 0,
            bottom: 1,
            left: 0,
            right: 1,
        };
        for skip in skips.iter().rev() {
            let (uw, ub) = next();
            let up = cur.upsample_nearest2x()?.conv2d_padded(
                uw,
                Some(ub),
                1,
                up_pad,
                PadMode::Replicate,
            )?;
            cur = conv3(skip.concat_channels(up)?, next())?.relu()?;
        }
        for level in pyramid {
            let up = conv3(cur.upsample_nearest2x()?, next())?.relu()?;
            let branch = conv3(*level, next())?.relu()?;
            cur = conv3(up.concat_channels(branch)?, next())?.relu()?;
        }
        conv3(cur, next())
    }

    /// Super-resolves one `N×3×H×W` tensor in `[0, 1]`; any `H`, `W` work via
    /// pad-and-crop. The result is not clamped.
    pub fn super_resolve(&self, lr: &Tensor) -> Result<Tensor> {
        let prepared = PreparedInput::new(&self.config, lr)?;
        let tape = Tape::new();
        let params = self.attach_frozen(&tape);
        Ok(self.forward(&tape, &params, &prepared)?.value())
    }
}
