//! Adam training loop, learning-rate schedule, evaluation and sweeps.

mod adam;
mod sweep;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use sweep::{
    sweep_depth, sweep_lambda, DepthRow, LambdaRow, RawPair, DEFAULT_DEPTH_GRID,
    DEFAULT_LAMBDA_GRID,
};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::loss::{mge_value, LossConfig};
use crate::metrics::{pairwise_sum, psnr, ssim, SsimWindow, PEAK};
use crate::model::{Checkpoint, Model, PreparedInput};
use crate::pipeline::{ImageBuf, PairManifest};

pub const LATEST_CHECKPOINT: &str = "latest.usrc";
pub const BEST_CHECKPOINT: &str = "best.usrc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// The rate halves after every this many epochs.
    pub lr_half_every: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub shuffle: bool,
    /// Rescale the gradient to at most this global L2 norm.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1,
            lr0: 1e-3,
            lr_half_every: 25,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            shuffle: true,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.lr0.is_finite() || self.lr0 <= 0.0 {
            return Err(Error::Config(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.lr_half_every == 0 {
            return Err(Error::Config("lr_half_every must be positive".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip_grad_norm must be positive, got {c}"
                )));
            }
        }
        self.adam.validate()?;
        self.loss.validate()
    }

    /// `lr0 · 0.5^floor(epoch / lr_half_every)` for zero-based `epoch`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let halvings = (epoch / self.lr_half_every).min(i32::MAX as u64) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

/// One training example with its network input already prepared.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub name: String,
    pub input: PreparedInput,
    pub target: Tensor,
}

impl TrainSample {
    /// Pairs an LR tensor with its HR target; the HR extents must be
    /// exactly `scale ×` the LR extents.
    pub fn new(name: impl Into<String>, model: &Model, lr: &Tensor, hr: &Tensor) -> Result<Self> {
        let (_, _, h, w) = lr.dims4("TrainSample")?;
        let (_, _, th, tw) = hr.dims4("TrainSample")?;
        let r = model.config.scale;
        if th != r * h {
            return Err(Error::dim("TrainSample", "height", r * h, th));
        }
        if tw != r * w {
            return Err(Error::dim("TrainSample", "width", r * w, tw));
        }
        Ok(TrainSample {
            name: name.into(),
            input: PreparedInput::new(&model.config, lr)?,
            target: hr.clone(),
        })
    }
}

/// Decodes every pair of a manifest.
pub fn load_samples(manifest: &PairManifest, model: &Model) -> Result<Vec<TrainSample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            if e.scale as usize != model.config.scale {
                return Err(Error::Config(format!(
                    "manifest pair {} has scale {}, model expects {}",
                    e.hr, e.scale, model.config.scale
                )));
            }
            let lr = ImageBuf::open(&manifest.resolve(&e.lr))?.to_tensor();
            let hr = ImageBuf::open(&manifest.resolve(&e.hr))?.to_tensor();
            TrainSample::new(e.hr.clone(), model, &lr, &hr)
        })
        .collect()
}

/// Seeded split of `n` indices into `(train, holdout)` with `k` held out.
pub fn split_holdout(n: usize, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k >= n {
        return Err(Error::Config(format!(
            "cannot hold out {k} of {n} samples and still train"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    let mut held = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Ok((train, held))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: u64,
    /// Mean pre-update loss over the epoch's samples.
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// `epoch,loss,lr,seconds` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.loss, e.lr, e.seconds);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean scores of a model over a sample set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalStats {
    pub psnr_db: f64,
    /// Exact-magnitude MGE on the `[0, 1]` scale.
    pub mge: f64,
    /// `None` when some image is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

/// Predicts every sample (clamped to `[0, 1]`) and averages PSNR, MGE and,
/// where the images are large enough, SSIM.
pub fn evaluate(model: &Model, samples: &[TrainSample]) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluate: no samples".into()));
    }
    let window = SsimWindow::default();
    let mut p = Vec::with_capacity(samples.len());
    let mut g = Vec::with_capacity(samples.len());
    let mut s = Vec::with_capacity(samples.len());
    for sample in samples {
        let pred = predict(model, &sample.input)?.map(|v| v.clamp(0.0, 1.0));
        let y = sample.target.map(|v| v * PEAK);
        let yhat = pred.map(|v| v * PEAK);
        p.push(psnr(&y, &yhat)?);
        g.push(mge_value(&pred, &sample.target, 0.0)?);
        let (_, _, h, w) = y.dims4("evaluate")?;
        if h >= window.size && w >= window.size {
            s.push(ssim(&y, &yhat, &window)?);
        }
    }
    let n = samples.len() as f64;
    Ok(EvalStats {
        psnr_db: pairwise_sum(&p) / n,
        mge: pairwise_sum(&g) / n,
        ssim: (s.len() == samples.len()).then(|| pairwise_sum(&s) / n),
    })
}

/// Tape-free forward pass on a prepared input.
pub fn predict(model: &Model, input: &PreparedInput) -> Result<Tensor> {
    let tape = Tape::new();
    let params = model.attach_frozen(&tape);
    Ok(model.forward(&tape, &params, input)?.value())
}

/// Owns the model and optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    /// Number of completed epochs.
    pub epoch: u64,
    pub best_val_psnr: Option<f64>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            model,
            adam,
            cfg,
            epoch: 0,
            best_val_psnr: None,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ck.model()?;
        let adam = match &ck.adam {
            Some(a) => a.clone(),
            None => AdamState::new(&model.params),
        };
        Ok(Trainer {
            model,
            adam,
            cfg,
            epoch: ck.epoch,
            best_val_psnr: ck.best_val_psnr,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(
            &self.model,
            Some(self.adam.clone()),
            self.epoch,
            self.cfg.lr_at(self.epoch.saturating_sub(1)),
        );
        ck.best_val_psnr = self.best_val_psnr;
        ck
    }

    /// Sample order for epoch `epoch`: a seeded Fisher–Yates shuffle that
    /// depends only on `(seed, epoch)`.
    pub fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Forward, loss and backward for one sample; gradients are added to
    /// the parameters' `grad` buffers. Returns the loss.
    fn accumulate_sample(&mut self, sample: &TrainSample) -> Result<f64> {
        let tape = Tape::new();
        let vars = self.model.attach(&tape);
        let pred = self.model.forward(&tape, &vars, &sample.input)?;
        let target = tape.constant(&sample.target);
        let loss = self.cfg.loss.apply(pred, target)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at epoch {} on {}", self.epoch, sample.name),
            });
        }
        let grads = loss.backward()?;
        for (v, (_, p)) in vars.iter().zip(self.model.params.iter_mut()) {
            grads.accumulate_into(*v, p)?;
            if p.grad.is_none() {
                p.accumulate_grad(&vec![0.0; p.len()])?;
            }
        }
        Ok(value)
    }

    fn clip_and_scale(&mut self, batch: usize) {
        let inv = 1.0 / batch as f64;
        let mut norm2 = 0.0;
        for (_, p) in self.model.params.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                    norm2 += *v * *v;
                }
            }
        }
        if let Some(max) = self.cfg.clip_grad_norm {
            let norm = norm2.sqrt();
            if norm > max {
                let s = max / norm;
                for (_, p) in self.model.params.iter_mut() {
                    if let Some(g) = p.grad.as_mut() {
                        g.iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
        }
    }

    /// Runs the next epoch over `data`.
    pub fn run_epoch(&mut self, data: &[TrainSample]) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let order = self.epoch_order(epoch, data.len());
        let mut losses = Vec::with_capacity(data.len());
        for batch in order.chunks(self.cfg.batch_size) {
            self.model.params.zero_grad();
            for &i in batch {
                losses.push(self.accumulate_sample(&data[i])?);
            }
            if batch.len() > 1 || self.cfg.clip_grad_norm.is_some() {
                self.clip_and_scale(batch.len());
            }
            adam_step(&mut self.model.params, &mut self.adam, lr, &self.cfg.adam)?;
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch,
            loss: pairwise_sum(&losses) / losses.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
            val_psnr: None,
        })
    }

    /// Trains until `cfg.epochs` epochs have completed. With a checkpoint
    /// directory, `latest.usrc` is rewritten after every epoch and
    /// `best.usrc` whenever validation PSNR improves.
    pub fn fit(
        &mut self,
        train: &[TrainSample],
        val: Option<&[TrainSample]>,
        checkpoints: Option<&Path>,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while self.epoch < self.cfg.epochs {
            let mut rec = self.run_epoch(train)?;
            let mut improved = false;
            if let Some(v) = val.filter(|v| !v.is_empty()) {
                let stats = evaluate(&self.model, v)?;
                rec.val_psnr = Some(stats.psnr_db);
                let score = stats.psnr_db;
                if !score.is_nan() && self.best_val_psnr.is_none_or(|b| score > b) {
                    self.best_val_psnr = Some(score);
                    improved = true;
                }
            }
            log::info!(
                "epoch {:>4}  loss {:.6e}  lr {:.3e}  {:.2}s{}",
                rec.epoch,
                rec.loss,
                rec.lr,
                rec.seconds,
                rec.val_psnr
                    .map(|p| format!("  val psnr {p:.3} dB"))
                    .unwrap_or_default()
            );
            if let Some(dir) = checkpoints {
                let ck = self.checkpoint();
                ck.save(&dir.join(LATEST_CHECKPOINT))?;
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
            }
            report.epochs.push(rec);
        }
        Ok(report)
    }
}

/// Trains `model` on every pair of `pairs`, writing checkpoints to
/// `checkpoints` when given.
pub fn train(
    model: Model,
    pairs: &PairManifest,
    cfg: TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::Contract("pair manifest is empty".into()));
    }
    let samples = load_samples(pairs, &model)?;
    let mut trainer = Trainer::new(model, cfg)?;
    let report = trainer.fit(&samples, None, checkpoints)?;
    Ok((trainer.model, report))
}
