//! Command-line front end: argument definitions, JSON run configuration
//! and subcommand dispatch. The `unetsr` binary is a thin wrapper over
//! [`main_from_args`].
//!
//! Exit codes: `0` success, `1` runtime failure, `2` usage or configuration
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradsuite::{self, Suite};
use crate::loss::LossKind;
use crate::metrics::{score_unit_range, ImageScore, MetricReport, SsimForm, SsimWindow};
use crate::model::{layer_table, param_count, Checkpoint, Model, NetConfig};
use crate::pipeline::{bicubic_resize, make_pairs, ImageBuf, PairManifest};
use crate::train::{
    self, split_holdout, sweep_depth, sweep_lambda, DepthRow, LambdaRow, RawPair, TrainConfig,
    TrainSample, Trainer, BEST_CHECKPOINT, DEFAULT_DEPTH_GRID, DEFAULT_LAMBDA_GRID,
};

pub const THREADS_ENV: &str = "UNETSR_THREADS";
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "unetsr",
    version,
    about = "U-net single-image super-resolution"
)]
pub struct Cli {
    /// Log only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build HR/LR training pairs and a manifest from a directory of images.
    PairGen(PairGenArgs),
    /// Train a model with Adam on a pair manifest.
    Train(TrainArgs),
    /// Score a model (or a baseline) on a pair manifest.
    Eval(EvalArgs),
    /// Super-resolve one image.
    Sr(SrArgs),
    /// Compare autograd against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the parameter count and per-layer table of a configuration.
    ParamCount(ParamCountArgs),
    /// Train one model per depth and tabulate PSNR.
    SweepDepth(SweepDepthArgs),
    /// Train one model per gradient-loss weight and tabulate PSNR and MGE.
    SweepLambda(SweepLambdaArgs),
}

fn parse_scale(s: &str) -> std::result::Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (2 | 4 | 8)) => Ok(v),
        _ => Err(format!("scale must be 2, 4 or 8, got '{s}'")),
    }
}

#[derive(Args, Debug)]
pub struct PairGenArgs {
    /// Directory of source images (PNG, JPEG or BMP).
    #[arg(long)]
    pub src: PathBuf,
    /// Output root; receives hr/ and x<scale>/.
    #[arg(long)]
    pub out: PathBuf,
    /// Downscale factor: 2, 4 or 8.
    #[arg(long, value_parser = parse_scale)]
    pub scale: u32,
    /// Square HR size in pixels (224 gives LR 112, 56 or 28).
    #[arg(long, default_value_t = 224)]
    pub target: usize,
}

/// Network and optimisation flags shared by training and sweeps. Every flag
/// overrides the matching field of `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct ModelFlags {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Magnification factor: 2, 4 or 8 [default: 2].
    #[arg(long, value_parser = parse_scale)]
    pub scale: Option<u32>,
    /// Encoder downscale stages [default: 5, the reference depth].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channels at the first level; doubles per level [default: 64].
    #[arg(long)]
    pub base_width: Option<usize>,
    /// Upper bound on channels per level [default: 512].
    #[arg(long)]
    pub width_cap: Option<usize>,
    /// Training loss [default: mixge; mse gives the plain-MSE variant].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Gradient-loss weight [default: 0.1, the reference weight].
    #[arg(long)]
    pub lambda_g: Option<f64>,
    /// Epochs to train [default: 200].
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Initial learning rate, halved every --lr-half-every epochs [default: 1e-3].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs between learning-rate halvings [default: 25].
    #[arg(long)]
    pub lr_half_every: Option<u64>,
    /// Samples per Adam update [default: 1].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialisation and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable per-epoch shuffling.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Rescale gradients to at most this global L2 norm [default: off].
    #[arg(long)]
    pub clip_grad_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Mixge,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Training pair manifest (pairs.json).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Validation pair manifest; enables best.usrc.
    #[arg(long)]
    pub val_pairs: Option<PathBuf>,
    /// Hold out this many seeded-random training pairs for validation.
    #[arg(long)]
    pub val_holdout: Option<usize>,
    /// Directory for checkpoints and the training report [default: runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from a checkpoint; the network configuration comes from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMethod {
    /// The checkpointed model.
    Model,
    /// Bicubic upscaling of the LR input.
    Bicubic,
    /// The HR image itself (sanity check).
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SsimArg {
    /// Windowed covariance in the structure term.
    Covariance,
    /// Product of the windowed deviations in the structure term.
    DeviationProduct,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint (required for --method model).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Pair manifest to score.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMethod::Model)]
    pub method: EvalMethod,
    #[arg(long, value_enum, default_value_t = SsimArg::Covariance)]
    pub ssim_form: SsimArg,
    /// Per-image CSV output [default: metrics.csv].
    #[arg(long, default_value = "metrics.csv")]
    pub out_csv: PathBuf,
    /// Summary JSON output [default: metrics.json].
    #[arg(long, default_value = "metrics.json")]
    pub out_json: PathBuf,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input image (PNG, JPEG or BMP); any size.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG; extents are exactly scale × input.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    All,
    Loss,
    Model,
    Ops,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::All => Suite::All,
            SuiteArg::Loss => Suite::Loss,
            SuiteArg::Model => Suite::Model,
            SuiteArg::Ops => Suite::Ops,
        }
    }
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub module: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append a deliberately broken op; the run must then fail.
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Args, Debug)]
pub struct ParamCountArgs {
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[arg(long, default_value_t = 2, value_parser = parse_scale)]
    pub scale: u32,
    #[arg(long, default_value_t = 64)]
    pub base_width: usize,
    #[arg(long, default_value_t = 512)]
    pub width_cap: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SweepDepthArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Training pair manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Evaluation manifest [default: the training manifest].
    #[arg(long)]
    pub eval_pairs: Option<PathBuf>,
    /// Comma-separated depths [default: 2,3,4,5,6,7,8].
    #[arg(long, value_delimiter = ',')]
    pub depths: Vec<usize>,
    /// CSV output [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepLambdaArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub eval_pairs: Option<PathBuf>,
    /// Comma-separated weights [default: 1e-4,1e-3,1e-2,1e-1,1]; 0 is MSE only.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Merged configuration: JSON file first, then flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub pairs: Option<PathBuf>,
    pub val_pairs: Option<PathBuf>,
    pub val_holdout: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `flags.config` if given and applies every flag on top.
    pub fn from_flags(flags: &ModelFlags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        let net = &mut cfg.net;
        let tr = &mut cfg.train;
        if let Some(v) = flags.scale {
            net.scale = v as usize;
        }
        if let Some(v) = flags.depth {
            net.depth = v;
        }
        if let Some(v) = flags.base_width {
            net.base_width = v;
        }
        if let Some(v) = flags.width_cap {
            net.width_cap = v;
        }
        if let Some(v) = flags.loss {
            tr.loss.kind = match v {
                LossArg::Mse => LossKind::Mse,
                LossArg::Mixge => LossKind::Mixge,
            };
        }
        if let Some(v) = flags.lambda_g {
            tr.loss.lambda_g = v;
        }
        if let Some(v) = flags.epochs {
            tr.epochs = v;
        }
        if let Some(v) = flags.lr {
            tr.lr0 = v;
        }
        if let Some(v) = flags.lr_half_every {
            tr.lr_half_every = v;
        }
        if let Some(v) = flags.batch_size {
            tr.batch_size = v;
        }
        if let Some(v) = flags.seed {
            tr.seed = v;
            net.seed = v;
        }
        if flags.no_shuffle {
            tr.shuffle = false;
        }
        if flags.clip_grad_norm.is_some() {
            tr.clip_grad_norm = flags.clip_grad_norm;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()
    }
}

/// Applies `UNETSR_THREADS` to the global rayon pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))
}

/// Parses `args` (including the program name), runs the subcommand and
/// maps the outcome to an exit code.
pub fn main_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::PairGen(a) => pair_gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sr(a) => sr_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::ParamCount(a) => param_count_cmd(a),
        Command::SweepDepth(a) => sweep_depth_cmd(a),
        Command::SweepLambda(a) => sweep_lambda_cmd(a),
    }
}

fn pair_gen(a: PairGenArgs) -> Result<()> {
    let m = make_pairs(&a.src, &a.out, a.scale, a.target)?;
    let lr = a.target / a.scale as usize;
    println!(
        "wrote {} pairs ({}x{} -> {lr}x{lr}) under {}",
        m.len(),
        a.target,
        a.target,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::from_flags(&a.model)?;
    if a.pairs.is_some() {
        cfg.pairs = a.pairs;
    }
    if a.val_pairs.is_some() {
        cfg.val_pairs = a.val_pairs;
    }
    if a.val_holdout.is_some() {
        cfg.val_holdout = a.val_holdout;
    }
    if a.out.is_some() {
        cfg.out_dir = a.out;
    }
    if cfg.val_pairs.is_some() && cfg.val_holdout.is_some() {
        return Err(Error::Config(
            "use either a validation manifest or a holdout, not both".into(),
        ));
    }
    let pairs_path = cfg.pairs.clone().ok_or_else(|| {
        Error::Config("no training manifest: pass --pairs or set \"pairs\"".into())
    })?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));

    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let flags_touch_net = a.model.scale.is_some()
                || a.model.depth.is_some()
                || a.model.base_width.is_some()
                || a.model.width_cap.is_some();
            if flags_touch_net && ck.net_config != cfg.net {
                return Err(Error::Config(
                    "network flags disagree with the checkpoint being resumed".into(),
                ));
            }
            cfg.net = ck.net_config.clone();
            cfg.validate()?;
            Trainer::from_checkpoint(&ck, cfg.train.clone())?
        }
        None => {
            cfg.validate()?;
            Trainer::new(Model::build(cfg.net.clone())?, cfg.train.clone())?
        }
    };

    let manifest = PairManifest::load(&pairs_path)?;
    if manifest.is_empty() {
        return Err(Error::Config(format!(
            "{} lists no pairs",
            pairs_path.display()
        )));
    }
    let all = train::load_samples(&manifest, &trainer.model)?;
    let (train_set, val_set): (Vec<TrainSample>, Option<Vec<TrainSample>>) =
        match (cfg.val_holdout, &cfg.val_pairs) {
            (Some(k), _) => {
                let (t, v) = split_holdout(all.len(), k, cfg.train.seed)?;
                let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
                (pick(&t), Some(pick(&v)))
            }
            (None, Some(p)) => {
                let vm = PairManifest::load(p)?;
                (all, Some(train::load_samples(&vm, &trainer.model)?))
            }
            (None, None) => (all, None),
        };
    log::info!(
        "training {} params on {} pairs for {} epochs (from epoch {})",
        trainer.model.param_count(),
        train_set.len(),
        cfg.train.epochs,
        trainer.epoch
    );
    let report = trainer.fit(&train_set, val_set.as_deref(), Some(&out_dir))?;
    let csv = out_dir.join("train_report.csv");
    let json = out_dir.join("train_report.json");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&json, report.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
    if let Some(last) = report.epochs.last() {
        println!("epoch {} loss {:.6e}", last.epoch, last.loss);
    }
    if val_set.is_some() {
        println!(
            "best checkpoint: {}",
            out_dir.join(BEST_CHECKPOINT).display()
        );
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let manifest = PairManifest::load(&a.pairs)?;
    let model = match a.method {
        EvalMethod::Model => {
            let path = a
                .ckpt
                .as_ref()
                .ok_or_else(|| Error::Config("--method model needs --ckpt".into()))?;
            Some(Checkpoint::load(path)?.model()?)
        }
        _ => None,
    };
    let window = SsimWindow::with_form(match a.ssim_form {
        SsimArg::Covariance => SsimForm::Covariance,
        SsimArg::DeviationProduct => SsimForm::DeviationProduct,
    });
    let mut report = MetricReport::default();
    for e in &manifest.entries {
        let hr = ImageBuf::open(&manifest.resolve(&e.hr))?;
        let y = hr.to_tensor();
        let pred = match a.method {
            EvalMethod::Identity => y.clone(),
            EvalMethod::Bicubic => {
                let lr = ImageBuf::open(&manifest.resolve(&e.lr))?.to_tensor();
                bicubic_resize(&lr, hr.height, hr.width)?
            }
            EvalMethod::Model => {
                let m = model.as_ref().expect("loaded above");
                if m.config.scale != e.scale as usize {
                    return Err(Error::Config(format!(
                        "{} is a x{} pair but the model is x{}",
                        e.hr, e.scale, m.config.scale
                    )));
                }
                let lr = ImageBuf::open(&manifest.resolve(&e.lr))?.to_tensor();
                m.super_resolve(&lr)?
            }
        };
        // score what would be written to disk: clamped and rounded to 8 bits
        let pred = ImageBuf::from_tensor(&pred)?.to_tensor();
        let (psnr_db, ssim) = score_unit_range(&y, &pred, &window)?;
        report.push(ImageScore {
            path: e.hr.clone(),
            scale: e.scale,
            psnr_db,
            ssim,
        });
    }
    for p in [&a.out_csv, &a.out_json] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    report.write(&a.out_csv, &a.out_json)?;
    println!("{}", report.summary_json()?);
    Ok(())
}

fn sr_cmd(a: SrArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.model()?;
    let img = ImageBuf::open(&a.input)?;
    let out = model.super_resolve(&img.to_tensor())?;
    let out = ImageBuf::from_tensor(&out)?;
    out.save_png(&a.out)?;
    println!(
        "{}x{} -> {}x{}: {}",
        img.width,
        img.height,
        out.width,
        out.height,
        a.out.display()
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let mut cases = gradsuite::cases(a.module.into(), a.seed);
    if a.inject_bug {
        cases.push(gradsuite::injected_bug_case(a.seed));
    }
    let report = gradsuite::run_cases(&cases)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(Error::Contract(format!(
            "gradient check failed: {}",
            names.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct ParamCountJson<'a> {
    config: &'a NetConfig,
    layers: Vec<crate::model::LayerSpec>,
    total: usize,
}

fn param_count_cmd(a: ParamCountArgs) -> Result<()> {
    let cfg = NetConfig {
        width_cap: a.width_cap,
        ..NetConfig::new(a.depth, a.scale as usize, a.base_width)
    };
    cfg.validate()?;
    let layers = layer_table(&cfg);
    let total = param_count(&cfg);
    if a.json {
        let doc = ParamCountJson {
            config: &cfg,
            layers,
            total,
        };
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!(
            "{:<18} {:>6} {:>6} {:>3} {:>12}",
            "layer", "in", "out", "k", "params"
        );
        for l in &layers {
            println!(
                "{:<18} {:>6} {:>6} {:>3} {:>12}",
                l.name, l.in_channels, l.out_channels, l.kernel, l.params
            );
        }
        println!(
            "{:<18} {:>6} {:>6} {:>3} {:>12}",
            "total", "", "", "", total
        );
    }
    Ok(())
}

/// Loads every pair of a manifest as raw tensors.
pub fn load_raw_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let m = PairManifest::load(path)?;
    if m.is_empty() {
        return Err(Error::Config(format!("{} lists no pairs", path.display())));
    }
    m.entries
        .iter()
        .map(|e| {
            let lr = ImageBuf::open(&m.resolve(&e.lr))?.to_tensor();
            let hr = ImageBuf::open(&m.resolve(&e.hr))?.to_tensor();
            Ok((e.hr.clone(), lr, hr))
        })
        .collect()
}

fn emit(csv: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn sweep_depth_cmd(a: SweepDepthArgs) -> Result<()> {
    let cfg = RunConfig::from_flags(&a.model)?;
    cfg.validate()?;
    let train = load_raw_pairs(&a.pairs)?;
    let eval = match &a.eval_pairs {
        Some(p) => load_raw_pairs(p)?,
        None => train.clone(),
    };
    let depths = if a.depths.is_empty() {
        DEFAULT_DEPTH_GRID.to_vec()
    } else {
        a.depths
    };
    let rows = sweep_depth(&depths, &cfg.net, &cfg.train, &train, &eval)?;
    emit(DepthRow::to_csv(&rows), a.out.as_deref())
}

fn sweep_lambda_cmd(a: SweepLambdaArgs) -> Result<()> {
    let cfg = RunConfig::from_flags(&a.model)?;
    cfg.validate()?;
    let train = load_raw_pairs(&a.pairs)?;
    let eval = match &a.eval_pairs {
        Some(p) => load_raw_pairs(p)?,
        None => train.clone(),
    };
    let lambdas = if a.lambdas.is_empty() {
        DEFAULT_LAMBDA_GRID.to_vec()
    } else {
        a.lambdas
    };
    let rows = sweep_lambda(&lambdas, &cfg.net, &cfg.train, &train, &eval)?;
    emit(LambdaRow::to_csv(&rows), a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(
            &p,
            r#"{"net": {"depth": 3}, "train": {"epochs": 7, "loss": {"lambda_g": 0.5}}}"#,
        )
        .unwrap();
        let flags = ModelFlags {
            config: Some(p.clone()),
            epochs: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::from_flags(&flags).unwrap();
        assert_eq!(cfg.net.depth, 3);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.loss.lambda_g, 0.5);
        assert_eq!(cfg.net.base_width, 64);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"net": {"depht": 3}}"#).unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
    }

    #[test]
    fn scale_parser() {
        assert_eq!(parse_scale("4"), Ok(4));
        assert!(parse_scale("3").is_err());
        assert!(parse_scale("x").is_err());
    }
}
