//! SGD with momentum, the per-batch training step, the epoch loop, and
//! IoU-threshold evaluation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::iou;
use crate::data::GeoSample;
use crate::error::{Error, Result};
use crate::head::{assign_targets, decode, AssignmentTargets};
use crate::loss::{total_loss, LossWeights};
use crate::model::Model;
use crate::param::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Step-decay period in epochs; 0 keeps the learning rate constant.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 40,
            batch_size: 8,
            decay_every: 0,
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.decay_every > 0 && !(self.decay_factor > 0.0) {
            return Err(Error::Config(format!(
                "decay_factor must be positive, got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.learning_rate
        } else {
            self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }
}

/// Momentum SGD. Velocity buffers are keyed by parameter name so an
/// optimizer can outlive checkpoint reloads of the same model.
#[derive(Default)]
pub struct Sgd<T: Scalar> {
    velocity: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Self {
            velocity: HashMap::new(),
        }
    }

    /// v <- momentum * v + g; p <- p - lr * v; gradients are consumed.
    /// Parameters with no accumulated gradient see g = 0.
    pub fn step(&mut self, params: &ParamSet<T>, lr: f64, momentum: f64) -> Result<()> {
        let lr = T::from_f64(lr);
        let momentum = T::from_f64(momentum);
        for (name, tensor) in params.iter() {
            let grad = tensor
                .grad()
                .unwrap_or_else(|| vec![T::ZERO; tensor.numel()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: name.to_string(),
                });
            }
            let velocity = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::ZERO; tensor.numel()]);
            let mut data = tensor.to_vec();
            for ((v, g), p) in velocity.iter_mut().zip(&grad).zip(&mut data) {
                *v = momentum.mul(*v).add(*g);
                *p = p.sub(lr.mul(*v));
            }
            tensor.set_data(&data)?;
        }
        params.zero_grads();
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub cls: f64,
    pub cn: f64,
    pub reg: f64,
    pub n_pos: usize,
}

pub const LOG_HEADER: &str = "step\ttotal\tcls\tcn\treg\tn_pos";

impl StepLog {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.step, self.total, self.cls, self.cn, self.reg, self.n_pos
        )
    }
}

/// Run one optimizer step on a batch: per-sample forward/backward with the
/// loss scaled by 1/batch so gradients average, then a momentum update.
/// A non-finite loss aborts before touching the parameters.
pub fn train_step<T: Scalar>(
    model: &Model<T>,
    batch: &[(&GeoSample, &AssignmentTargets)],
    step: usize,
    lr: f64,
    momentum: f64,
    weights: &LossWeights,
    opt: &mut Sgd<T>,
) -> Result<StepLog> {
    assert!(!batch.is_empty(), "train_step needs a non-empty batch");
    model.params.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut log = StepLog {
        step,
        total: 0.0,
        cls: 0.0,
        cn: 0.0,
        reg: 0.0,
        n_pos: 0,
    };
    for (sample, targets) in batch {
        let outputs = model.forward(
            &sample.query.to_tensor(),
            sample.click,
            &sample.reference.to_tensor(),
        )?;
        let breakdown = total_loss(&outputs, targets, weights)?;
        let value = breakdown.total.scalar_value()?.to_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        log.total += value * scale;
        log.cls += breakdown.cls_term * scale;
        log.cn += breakdown.cn_term * scale;
        log.reg += breakdown.reg_term * scale;
        log.n_pos += targets.n_pos;
        breakdown.total.mul_scalar(scale).backward()?;
    }
    opt.step(&model.params, lr, momentum)?;
    Ok(log)
}

/// Epoch loop over seeded shuffles. `on_step` sees every log line;
/// `on_epoch` runs after each epoch (checkpointing lives there so an abort
/// keeps the last good checkpoint on disk).
pub fn train<T, FStep, FEpoch>(
    model: &Model<T>,
    dataset: &[GeoSample],
    cfg: &TrainConfig,
    weights: &LossWeights,
    mut on_step: FStep,
    mut on_epoch: FEpoch,
) -> Result<Vec<StepLog>>
where
    T: Scalar,
    FStep: FnMut(&StepLog) -> Result<()>,
    FEpoch: FnMut(usize, &Model<T>) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // Targets depend only on geometry, so compute them once.
    let grids = model.config.reference_grids();
    let targets: Vec<AssignmentTargets> = dataset
        .iter()
        .map(|s| assign_targets(&grids, &[s.gt_box], &model.config.head))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut opt = Sgd::new();
    let mut logs = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&GeoSample, &AssignmentTargets)> =
                chunk.iter().map(|&i| (&dataset[i], &targets[i])).collect();
            let log = train_step(model, &batch, step, lr, cfg.momentum, weights, &mut opt)?;
            on_step(&log)?;
            logs.push(log);
            step += 1;
        }
        on_epoch(epoch, model)?;
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub iou: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_at_25: f64,
    pub acc_at_50: f64,
    pub mean_iou: f64,
    pub records: Vec<SampleRecord>,
}

/// Percentage of IoU values meeting the threshold (>= comparison).
pub fn accuracy_from_ious(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    let hits = ious.iter().filter(|&&v| v >= threshold).count();
    100.0 * hits as f64 / ious.len() as f64
}

/// Decode the top-1 box per sample and score it against the ground truth.
/// Records keep dataset order; parameters are never touched.
pub fn evaluate<T: Scalar>(model: &Model<T>, dataset: &[GeoSample]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut records = Vec::with_capacity(dataset.len());
    for sample in dataset {
        let outputs = model.forward(
            &sample.query.to_tensor(),
            sample.click,
            &sample.reference.to_tensor(),
        )?;
        let decoded = decode(&outputs)?;
        records.push(SampleRecord {
            sample_id: sample.sample_id.clone(),
            iou: iou(&sample.gt_box, &decoded.bbox),
            confidence: decoded.confidence,
        });
    }
    let ious: Vec<f64> = records.iter().map(|r| r.iou).collect();
    Ok(EvalReport {
        acc_at_25: accuracy_from_ious(&ious, 0.25),
        acc_at_50: accuracy_from_ious(&ious, 0.50),
        mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
        records,
    })
}
