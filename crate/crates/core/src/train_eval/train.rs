use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{child_rng, Sample};
use crate::model::{ModelError, Prose};
use crate::nn_core::{lr_at_step, AdamW, AdamWConfig, Grads, Graph};

use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Batch means.
    pub total: f64,
    pub data: f64,
    pub symbol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Steps completed at the end of this epoch.
    pub step: u64,
    /// Mean of the step losses of this epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_data: f64,
    pub val_symbol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Losses {
    total: f64,
    data: f64,
    symbol: f64,
}

impl Losses {
    fn add(&mut self, o: Losses) {
        self.total += o.total;
        self.data += o.data;
        self.symbol += o.symbol;
    }

    fn mean(self, n: usize) -> Losses {
        let n = n as f64;
        Losses {
            total: self.total / n,
            data: self.data / n,
            symbol: self.symbol / n,
        }
    }

    fn finite(&self) -> bool {
        self.total.is_finite() && self.data.is_finite() && self.symbol.is_finite()
    }
}

fn sample_loss(
    model: &Prose,
    s: &Sample,
    cfg: &TrainConfig,
    grads: bool,
) -> Result<(Losses, Option<Grads>), ModelError> {
    let mut g = Graph::new(&model.store);
    let l = model.loss(&mut g, s, cfg.alpha, cfg.beta)?;
    let losses = Losses {
        total: g.scalar(l.total),
        data: g.scalar(l.data),
        symbol: l.symbol.map_or(0.0, |v| g.scalar(v)),
    };
    Ok((losses, grads.then(|| g.backward(l.total))))
}

/// Mean losses over `data` without gradients.
fn mean_loss(model: &Prose, data: &[Sample], cfg: &TrainConfig) -> Result<Losses, ModelError> {
    let parts: Vec<Losses> = data
        .par_iter()
        .map(|s| sample_loss(model, s, cfg, false).map(|r| r.0))
        .collect::<Result<_, _>>()?;
    let mut sum = Losses::default();
    parts.into_iter().for_each(|l| sum.add(l));
    Ok(sum.mean(data.len()))
}

/// Endless index stream over successive seeded permutations.
struct Batches {
    n: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            pass: 0,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut child_rng(self.seed, "shuffle", self.pass));
                self.pass += 1;
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

pub fn train(
    model: &mut Prose,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with(model, train, val, cfg, |_, _| {})
}

/// Minimizes `alpha * L_data + beta * L_symbol` with AdamW under warm-up
/// plus inverse square-root decay. After every epoch the validation loss
/// is computed and `on_epoch` observes the model; at the end the model
/// holds the parameters of the epoch with the lowest validation loss.
pub fn train_with(
    model: &mut Prose,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Prose),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or(train.len().div_ceil(cfg.batch_size));
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;
    let warmup = (cfg.warmup_fraction * total_steps as f64).round() as u64;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            clip_norm: Some(cfg.clip_norm),
            ..AdamWConfig::default()
        },
        &model.store,
    );
    let mut batches = Batches::new(train.len(), cfg.seed);
    let mut best = (usize::MAX, f64::INFINITY, model.store.clone());
    let mut report = TrainReport {
        steps: Vec::with_capacity(total_steps as usize),
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let idx = batches.next_batch(cfg.batch_size);
            let m: &Prose = model;
            let parts: Vec<(Losses, Option<Grads>)> = idx
                .par_iter()
                .map(|&i| sample_loss(m, &train[i], cfg, true))
                .collect::<Result<_, _>>()?;
            let mut sum = Losses::default();
            let mut grads = Grads::new(model.store.len());
            for (l, g) in parts {
                sum.add(l);
                grads.merge(g.expect("gradients requested"));
            }
            let losses = sum.mean(idx.len());
            grads.scale(1.0 / idx.len() as f64);
            let step = opt.step + 1;
            let lr = lr_at_step(cfg.lr, warmup, step);
            if !losses.finite() || opt.update(&mut model.store, &grads, lr).is_err() {
                model.store.load_from(&best.2).map_err(ModelError::from)?;
                return Err(TrainError::NonFiniteLoss { step });
            }
            epoch_sum += losses.total;
            report.steps.push(StepLog {
                step,
                epoch,
                lr,
                total: losses.total,
                data: losses.data,
                symbol: losses.symbol,
            });
        }
        let v = mean_loss(model, val, cfg)?;
        let log = EpochLog {
            epoch,
            step: opt.step,
            train_loss: epoch_sum / steps_per_epoch as f64,
            val_loss: v.total,
            val_data: v.data,
            val_symbol: v.symbol,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} (data {:.5}, symbol {:.5})",
            log.train_loss,
            log.val_loss,
            log.val_data,
            log.val_symbol
        );
        if v.total < best.1 {
            best = (epoch, v.total, model.store.clone());
        }
        on_epoch(&log, model);
        report.epochs.push(log);
    }
    report.best_epoch = best.0;
    model.store.load_from(&best.2).map_err(ModelError::from)?;
    Ok(report)
}

/// `step,epoch,train_loss,val_loss`, one row per epoch.
pub fn loss_curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,epoch,train_loss,val_loss\n");
    for e in &report.epochs {
        out.push_str(&format!("{},{},{:e},{:e}\n", e.step, e.epoch, e.train_loss, e.val_loss));
    }
    out
}
