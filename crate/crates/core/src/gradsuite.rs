//! Named finite-difference suites over every differentiable op, the loss
//! functions and a small composed model.
//!
//! Each case reduces its op's output to a scalar with a fixed random
//! weighting `Σ y ⊙ R`, so every output element contributes a distinct
//! gradient, and compares autograd against central differences.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{finite_diff_check, GradCheckReport, PadMode, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::loss::{mge, mixge, mse, sobel_maps, LossConfig};
use crate::model::{Model, NetConfig, PreparedInput};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ops,
    Loss,
    Model,
    All,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Suite::Ops),
            "loss" => Ok(Suite::Loss),
            "model" => Ok(Suite::Model),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!(
                "unknown gradcheck module '{s}' (expected all, loss, model or ops)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Ops => "ops",
            Suite::Loss => "loss",
            Suite::Model => "model",
            Suite::All => "all",
        })
    }
}

type Check = Box<dyn Fn() -> Result<GradCheckReport>>;

/// One named gradient check.
pub struct GradCase {
    pub name: String,
    check: Check,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        check: impl Fn() -> Result<GradCheckReport> + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            check: Box::new(check),
        }
    }

    /// Checks `f` at `x` with the suite's step and tolerance.
    pub fn at<F>(name: impl Into<String>, x: Tensor, f: F) -> Self
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + 'static,
    {
        Self::new(name, move || finite_diff_check(&f, &x, STEP, TOLERANCE))
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        (self.check)()
    }
}

#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub name: String,
    pub report: GradCheckReport,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub cases: Vec<CaseOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.report.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseOutcome> {
        self.cases.iter().filter(|c| !c.report.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.report.max_rel_err)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            let r = &c.report;
            writeln!(
                f,
                "{}  {:<36} max_rel_err {:.3e}  ({} elems, worst #{}: autograd {:.6e} vs numeric {:.6e})",
                if r.pass { "PASS" } else { "FAIL" },
                c.name,
                r.max_rel_err,
                r.checked,
                r.worst_index,
                r.analytic,
                r.numeric,
            )?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} of {} checks passed (tolerance {TOLERANCE:e}, step {STEP:e})",
            self.cases.len() - failed,
            self.cases.len()
        )
    }
}

pub fn run_cases(cases: &[GradCase]) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for case in cases {
        let start = Instant::now();
        let r = case
            .run()
            .map_err(|e| Error::Contract(format!("{}: {e}", case.name)))?;
        report.cases.push(CaseOutcome {
            name: case.name.clone(),
            report: r,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

pub fn run(suite: Suite, seed: u64) -> Result<SuiteReport> {
    run_cases(&cases(suite, seed))
}

pub fn cases(suite: Suite, seed: u64) -> Vec<GradCase> {
    match suite {
        Suite::Ops => op_cases(seed),
        Suite::Loss => loss_cases(seed),
        Suite::Model => model_cases(seed),
        Suite::All => {
            let mut all = op_cases(seed);
            all.extend(loss_cases(seed));
            all.extend(model_cases(seed));
            all
        }
    }
}

/// A deliberately wrong ReLU backward (passes the gradient everywhere).
/// Used as a negative control: it must fail.
pub fn injected_bug_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(Tensor::rand_uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut rng));
    let r = Tensor::rand_uniform(x.shape(), -1.0, 1.0, &mut rng);
    GradCase::at("relu[injected bug]", x, move |tape, v| {
        let y = v.custom_unary(|t| t.map(|a| a.max(0.0)), Rc::new(|_, g| g.to_vec()))?;
        weighted(tape, y, &r)
    })
}

fn weighted<'t>(tape: &'t Tape, y: Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    y.mul(tape.constant(r))?.sum_all()
}

/// Moves values off the ReLU kink so a finite step cannot cross it.
fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| {
        if v.abs() < 0.1 {
            v + 0.2f64.copysign(v)
        } else {
            v
        }
    })
}

/// Builds a case for `op(x)` weighted by a random tensor of the output's shape.
fn unary_case<F>(name: &str, x: Tensor, rng: &mut ChaCha8Rng, op: F) -> GradCase
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + 'static,
{
    let out_shape = {
        let tape = Tape::new();
        op(&tape, tape.constant(&x)).map(|v| v.shape())
    };
    match out_shape {
        Ok(shape) => {
            let r = Tensor::rand_uniform(&shape, -1.0, 1.0, rng);
            GradCase::at(name, x, move |tape, v| weighted(tape, op(tape, v)?, &r))
        }
        Err(e) => {
            let msg = e.to_string();
            GradCase::new(name, move || Err(Error::Contract(msg.clone())))
        }
    }
}

fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::rand_uniform(shape, -1.0, 1.0, rng);
    let mut cases = Vec::new();

    let x = u(&[2, 3, 5, 6], &mut rng);
    let w = u(&[4, 3, 3, 3], &mut rng);
    let b = u(&[4], &mut rng);
    let pads = Padding {
        top: 0,
        bottom: 1,
        left: 2,
        right: 0,
    };

    {
        let (w, b) = (w.clone(), b.clone());
        cases.push(unary_case(
            "conv2d.input",
            x.clone(),
            &mut rng,
            move |t, v| v.conv2d(t.constant(&w), Some(t.constant(&b)), 1, 1, PadMode::Zero),
        ));
    }
    {
        let (x, b) = (x.clone(), b.clone());
        cases.push(unary_case(
            "conv2d.weight",
            w.clone(),
            &mut rng,
            move |t, v| {
                t.constant(&x)
                    .conv2d(v, Some(t.constant(&b)), 1, 1, PadMode::Zero)
            },
        ));
    }
    {
        let (x, w) = (x.clone(), w.clone());
        cases.push(unary_case(
            "conv2d.bias",
            b.clone(),
            &mut rng,
            move |t, v| {
                t.constant(&x)
                    .conv2d(t.constant(&w), Some(v), 1, 1, PadMode::Zero)
            },
        ));
    }
    {
        let w = w.clone();
        cases.push(unary_case(
            "conv2d.stride2",
            x.clone(),
            &mut rng,
            move |t, v| v.conv2d(t.constant(&w), None, 2, 1, PadMode::Zero),
        ));
    }
    {
        let w = w.clone();
        cases.push(unary_case(
            "conv2d.replicate.input",
            x.clone(),
            &mut rng,
            move |t, v| v.conv2d_padded(t.constant(&w), None, 1, pads, PadMode::Replicate),
        ));
    }
    {
        let x = x.clone();
        cases.push(unary_case(
            "conv2d.replicate.weight",
            w.clone(),
            &mut rng,
            move |t, v| {
                t.constant(&x)
                    .conv2d_padded(v, None, 1, pads, PadMode::Replicate)
            },
        ));
    }

    // distinct values keep every pooling window free of ties
    let pool_in = {
        let mut t = u(&[1, 2, 4, 6], &mut rng);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += i as f64 * 1e-2;
        }
        t
    };
    cases.push(unary_case("maxpool2x2", pool_in, &mut rng, |_, v| {
        v.maxpool2x2()
    }));
    cases.push(unary_case(
        "upsample_nearest2x",
        u(&[1, 2, 3, 4], &mut rng),
        &mut rng,
        |_, v| v.upsample_nearest2x(),
    ));
    cases.push(unary_case(
        "relu",
        away_from_zero(u(&[1, 2, 4, 4], &mut rng)),
        &mut rng,
        |_, v| v.relu(),
    ));

    let other = u(&[1, 3, 3, 4], &mut rng);
    {
        let o = other.clone();
        cases.push(unary_case(
            "concat_channels.left",
            u(&[1, 2, 3, 4], &mut rng),
            &mut rng,
            move |t, v| v.concat_channels(t.constant(&o)),
        ));
    }
    {
        let o = u(&[1, 2, 3, 4], &mut rng);
        cases.push(unary_case(
            "concat_channels.right",
            other,
            &mut rng,
            move |t, v| t.constant(&o).concat_channels(v),
        ));
    }
    cases.push(unary_case(
        "crop",
        u(&[1, 2, 5, 6], &mut rng),
        &mut rng,
        |_, v| v.crop(1, 2, 3, 3),
    ));
    cases.push(unary_case(
        "reshape",
        u(&[1, 2, 3, 4], &mut rng),
        &mut rng,
        |_, v| v.reshape(&[2, 1, 4, 3]),
    ));

    let y = u(&[1, 2, 3, 3], &mut rng);
    for (name, which) in [
        ("add", 0),
        ("sub.left", 1),
        ("sub.right", 2),
        ("mul.left", 3),
        ("mul.right", 4),
    ] {
        let y = y.clone();
        cases.push(unary_case(
            name,
            u(&[1, 2, 3, 3], &mut rng),
            &mut rng,
            move |t, v| {
                let c = t.constant(&y);
                match which {
                    0 => v.add(c),
                    1 => v.sub(c),
                    2 => c.sub(v),
                    3 => v.mul(c),
                    _ => c.mul(v),
                }
            },
        ));
    }
    cases.push(unary_case(
        "square",
        u(&[2, 5], &mut rng),
        &mut rng,
        |_, v| v.square(),
    ));
    cases.push(unary_case(
        "sqrt_eps",
        Tensor::rand_uniform(&[2, 5], 0.1, 2.0, &mut rng),
        &mut rng,
        |_, v| v.sqrt_eps(1e-12),
    ));
    cases.push(unary_case(
        "scalar_mul",
        u(&[2, 5], &mut rng),
        &mut rng,
        |_, v| v.scalar_mul(-2.5),
    ));
    cases.push(unary_case(
        "mean_all",
        u(&[2, 3, 4], &mut rng),
        &mut rng,
        |_, v| v.mean_all(),
    ));
    cases.push(unary_case(
        "sum_all",
        u(&[2, 3, 4], &mut rng),
        &mut rng,
        |_, v| v.sum_all(),
    ));
    cases
}

fn image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::rand_uniform(&[1, 3, h, w], 0.0, 1.0, rng)
}

fn loss_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let target = image(&mut rng, 6, 7);
    let mut cases = Vec::new();

    cases.push(unary_case(
        "sobel.gx",
        image(&mut rng, 5, 6),
        &mut rng,
        |t, v| Ok(sobel_maps(t, v, 1e-12)?.gx),
    ));
    cases.push(unary_case(
        "sobel.gy",
        image(&mut rng, 5, 6),
        &mut rng,
        |t, v| Ok(sobel_maps(t, v, 1e-12)?.gy),
    ));
    cases.push(unary_case(
        "sobel.magnitude",
        image(&mut rng, 5, 6),
        &mut rng,
        |t, v| Ok(sobel_maps(t, v, 1e-12)?.magnitude),
    ));
    {
        let y = target.clone();
        cases.push(GradCase::at("mse", image(&mut rng, 6, 7), move |t, v| {
            mse(v, t.constant(&y))
        }));
    }
    {
        let y = target.clone();
        cases.push(GradCase::at("mge", image(&mut rng, 6, 7), move |t, v| {
            mge(v, t.constant(&y), 1e-12)
        }));
    }
    for lambda in [0.1, 1.0] {
        let y = target.clone();
        let cfg = LossConfig::mixge(lambda);
        cases.push(GradCase::at(
            format!("mixge(lambda={lambda})"),
            image(&mut rng, 6, 7),
            move |t, v| mixge(v, t.constant(&y), &cfg),
        ));
    }
    cases
}

/// The depth-2, ×2 model used by the model suite, with small random biases
/// so no pre-activation sits exactly on a ReLU kink.
pub fn check_model(seed: u64) -> Result<Model> {
    let cfg = NetConfig {
        seed,
        ..NetConfig::new(2, 2, 2)
    };
    let mut model = Model::build(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") {
            *t = Tensor::rand_uniform(t.shape(), -0.1, 0.1, &mut rng);
        }
    }
    Ok(model)
}

fn model_cases(seed: u64) -> Vec<GradCase> {
    let model = match check_model(seed) {
        Ok(m) => Rc::new(m),
        Err(e) => {
            let msg = e.to_string();
            return vec![GradCase::new("model", move || {
                Err(Error::Contract(msg.clone()))
            })];
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let lr = image(&mut rng, 8, 8);
    let target = Rc::new(image(&mut rng, 16, 16));
    let loss = LossConfig::mixge(0.1);
    let mut cases = Vec::new();

    // the bicubic pyramid is a fixed input to the network, held constant here
    let pyramid = match crate::model::bicubic_pyramid(&lr, model.config.scale) {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return vec![GradCase::new("model", move || {
                Err(Error::Contract(msg.clone()))
            })];
        }
    };
    {
        let (model, target) = (model.clone(), target.clone());
        cases.push(GradCase::at(
            "model.mixge.input",
            lr.clone(),
            move |t, v| {
                let pyr: Vec<Var> = pyramid.iter().map(|p| t.constant(p)).collect();
                let params = model.attach_frozen(t);
                let out = model.forward_raw(&params, v, &pyr)?;
                loss.apply(out, t.constant(&target))
            },
        ));
    }

    let input = Rc::new(PreparedInput::new(&model.config, &lr).expect("8x8 input is valid"));
    for (i, name) in model.params.names().enumerate() {
        let (model, target, input) = (model.clone(), target.clone(), input.clone());
        let x = model.params.tensor(i).clone();
        cases.push(GradCase::at(
            format!("model.mixge.{name}"),
            x,
            move |t, v| {
                let mut params = model.attach_frozen(t);
                params[i] = v;
                let out = model.forward(t, &params, &input)?;
                loss.apply(out, t.constant(&target))
            },
        ));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in ["all", "loss", "model", "ops"] {
            assert_eq!(s.parse::<Suite>().unwrap().to_string(), s);
        }
        assert!("grads".parse::<Suite>().is_err());
    }

    #[test]
    fn ops_suite_passes() {
        let r = run(Suite::Ops, 0).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn injected_bug_fails_with_its_name() {
        let r = run_cases(&[injected_bug_case(0)]).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures().next().unwrap().name, "relu[injected bug]");
        assert!(r.to_string().contains("FAIL  relu[injected bug]"));
    }
}
