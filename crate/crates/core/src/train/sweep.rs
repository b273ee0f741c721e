use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, TrainConfig, TrainSample, Trainer};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{Model, NetConfig};

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_DEPTH_GRID: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthRow {
    pub depth: usize,
    pub param_count: usize,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda_g: f64,
    pub psnr_db: f64,
    pub mge: f64,
}

impl DepthRow {
    pub const CSV_HEADER: &'static str = "depth,param_count,psnr_db";

    pub fn to_csv(rows: &[DepthRow]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            let _ = writeln!(s, "{},{},{}", r.depth, r.param_count, r.psnr_db);
        }
        s
    }
}

impl LambdaRow {
    pub const CSV_HEADER: &'static str = "lambda_g,psnr_db,mge";

    pub fn to_csv(rows: &[LambdaRow]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            let _ = writeln!(s, "{},{},{}", r.lambda_g, r.psnr_db, r.mge);
        }
        s
    }
}

/// Samples are stored with their prepared input, which depends on depth, so
/// they are kept as raw `(name, lr, hr)` triples here.
pub type RawPair = (String, crate::Tensor, crate::Tensor);

fn prepare(model: &Model, pairs: &[RawPair]) -> Result<Vec<TrainSample>> {
    pairs
        .iter()
        .map(|(n, lr, hr)| TrainSample::new(n.clone(), model, lr, hr))
        .collect()
}

fn train_and_eval(
    net: NetConfig,
    cfg: &TrainConfig,
    train: &[RawPair],
    eval: &[RawPair],
) -> Result<(Model, super::EvalStats)> {
    let model = Model::build(net)?;
    let train_s = prepare(&model, train)?;
    let eval_s = prepare(&model, eval)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.fit(&train_s, None, None)?;
    let stats = evaluate(&trainer.model, &eval_s)?;
    Ok((trainer.model, stats))
}

/// Trains one model per depth with everything else fixed.
pub fn sweep_depth(
    depths: &[usize],
    base: &NetConfig,
    cfg: &TrainConfig,
    train: &[RawPair],
    eval: &[RawPair],
) -> Result<Vec<DepthRow>> {
    if depths.is_empty() {
        return Err(Error::Config("depth list is empty".into()));
    }
    depths
        .iter()
        .map(|&depth| {
            let net = NetConfig {
                depth,
                ..base.clone()
            };
            net.validate()?;
            let (model, stats) = train_and_eval(net, cfg, train, eval)?;
            log::info!("depth {depth}: {:.3} dB", stats.psnr_db);
            Ok(DepthRow {
                depth,
                param_count: model.param_count(),
                psnr_db: stats.psnr_db,
            })
        })
        .collect()
}

/// Trains one model per gradient weight; `0` gives the MSE-only model.
pub fn sweep_lambda(
    lambdas: &[f64],
    net: &NetConfig,
    cfg: &TrainConfig,
    train: &[RawPair],
    eval: &[RawPair],
) -> Result<Vec<LambdaRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda list is empty".into()));
    }
    lambdas
        .iter()
        .map(|&lambda_g| {
            let loss = LossConfig {
                sqrt_epsilon: cfg.loss.sqrt_epsilon,
                ..LossConfig::mixge(lambda_g)
            };
            loss.validate()?;
            let run = TrainConfig {
                loss,
                ..cfg.clone()
            };
            let (_, stats) = train_and_eval(net.clone(), &run, train, eval)?;
            log::info!(
                "lambda {lambda_g}: {:.3} dB, mge {:.4e}",
                stats.psnr_db,
                stats.mge
            );
            Ok(LambdaRow {
                lambda_g,
                psnr_db: stats.psnr_db,
                mge: stats.mge,
            })
        })
        .collect()
}
