//! Minibatch SGD loops: adversarial training, robust curve training between
//! two frozen endpoints, and the quick second-endpoint fine-tune.
//!
//! A run is fully determined by (init, data, config, specs): epoch `k` draws
//! a private stream derived from `seed XOR k` which first shuffles the
//! indices and then supplies any per-batch draws.

use crate::attack::{msd_attack, pgd_attack, AttackSpec, DomainBox};
use crate::curve::CurveParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::{RngStream, Tensor};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::usage(format!("learning rate {} invalid", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.batch_size > dataset_len {
            return Err(Error::usage(format!(
                "batch size {} exceeds dataset size {dataset_len}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub wall_seconds: f64,
}

/// Final parameters plus the per-epoch log of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ModelParams,
    pub log: Vec<EpochMetrics>,
}

/// Trained curve plus the per-epoch log.
#[derive(Debug, Clone)]
pub struct CurveRun {
    pub curve: CurveParams,
    pub log: Vec<EpochMetrics>,
}

impl TrainRun {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|m| m.train_loss)
    }
}

fn craft_batch(
    params: &ModelParams,
    x: &Tensor,
    y: &[usize],
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<Tensor> {
    match specs.len() {
        0 => Ok(x.clone()),
        1 => pgd_attack(params, x, y, &specs[0], domain),
        _ => msd_attack(params, x, y, specs, domain),
    }
}

/// Adversarial training: E epochs of SGD where each batch is replaced by its
/// worst-case perturbation under `specs` (none: standard training; one:
/// single-norm PGD; several: MSD).
pub fn adversarial_train(
    init: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<TrainRun> {
    cfg.validate(data.len())?;
    for s in specs {
        s.validate()?;
    }
    let mut params = init.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut stream = RngStream::derive(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            stream.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (bx, by) = data.batch(chunk);
            let x_adv = craft_batch(&params, &bx, &by, specs, domain)?;
            let (loss, grad) = params.loss_and_param_grad(&x_adv, &by)?;
            let updated = params.flat().zip(&grad, |p, g| p - cfg.lr * g)?;
            params = params.with_flat(updated)?;
            loss_sum += loss;
            batches += 1;
        }
        log.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainRun { params, log })
}

/// Robust curve training: connect two frozen endpoints with a quadratic
/// Bezier path whose control point starts at the endpoint midpoint. Each
/// batch samples one t, crafts perturbations against the model at t, and
/// updates only the control point through the Bezier chain factor.
pub fn rmc_train(
    a: &ModelParams,
    b: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<CurveRun> {
    cfg.validate(data.len())?;
    for s in specs {
        s.validate()?;
    }
    let mut curve = CurveParams::from_endpoints(a.clone(), b.clone())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut stream = RngStream::derive(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            stream.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let t = stream.next_f64();
            let point = curve.curve_point(t)?;
            let (bx, by) = data.batch(chunk);
            let x_adv = craft_batch(&point, &bx, &by, specs, domain)?;
            let (loss, grad) = point.loss_and_param_grad(&x_adv, &by)?;
            let routed = curve.control_grad(&grad, t)?;
            let updated = curve
                .control()
                .flat()
                .zip(&routed, |p, g| p - cfg.lr * g)?;
            curve.set_control(updated)?;
            loss_sum += loss;
            batches += 1;
        }
        log.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(CurveRun { curve, log })
}

/// Second-endpoint generation: keep `base` as one endpoint and fine-tune a
/// copy for a few epochs under a different perturbation norm. Returns the
/// untouched base and the fine-tune run whose params serve as the other
/// endpoint.
pub fn srmc_endpoints(
    base: &ModelParams,
    data: &Dataset,
    cfg_few: &TrainConfig,
    spec_new: &AttackSpec,
    domain: &DomainBox,
) -> Result<(ModelParams, TrainRun)> {
    let tuned = adversarial_train(base, data, cfg_few, std::slice::from_ref(spec_new), domain)?;
    Ok((base.clone(), tuned))
}
