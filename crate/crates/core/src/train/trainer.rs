use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, LossConfig};
use super::optim::{clip_global_norm, AdamW, AdamWConfig};
use super::schedule::lr_at;
use crate::data::{Dataset, Segment};
use crate::error::{Error, Result};
use crate::model::{checkpoint, MoHets};
use crate::tensor::{Element, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    /// Windows per step; each window contributes one row per variate.
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stops after this many optimizer steps; the schedule spans the shorter of this and `epochs`.
    pub max_steps: Option<usize>,
    /// Caps the validation windows scored per epoch (evenly thinned).
    pub max_val_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_lr: 3.2e-3,
            min_lr: 1.2e-4,
            warmup_fraction: 0.1,
            epochs: 10,
            batch_size: 32,
            patience: 5,
            seed: 0,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
            clip_norm: Some(1.0),
            max_steps: None,
            max_val_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr) {
            return Err(Error::config(format!(
                "learning rates must satisfy 0 < min ({}) <= max ({})",
                self.min_lr, self.max_lr
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config(format!("warmup fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

/// Window starts used for optimization and early stopping.
#[derive(Debug, Clone)]
pub struct TrainSet<'a> {
    pub dataset: &'a Dataset,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl<'a> TrainSet<'a> {
    /// All training windows at stride 1 and validation windows at stride H_o.
    pub fn from_dataset(dataset: &'a Dataset) -> Result<Self> {
        Ok(Self {
            dataset,
            train: dataset.window_starts(Segment::Train, 1)?,
            val: dataset.window_starts(Segment::Val, dataset.horizon)?,
        })
    }
}

/// Where run artifacts go; nothing is written when `dir` is `None`.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    /// Stored in every checkpoint sidecar.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub huber: f64,
    pub balance: f64,
    pub total: f64,
    /// Selection fraction of each expert, per MoHE layer.
    pub f_histogram: Vec<Vec<f64>>,
}

impl StepRecord {
    pub fn max_fraction(&self) -> f64 {
        self.f_histogram.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub val_mse: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

/// MSE of H_o-step predictions on the dataset's standardized scale.
pub fn validation_mse<T: Element>(model: &MoHets<T>, dataset: &Dataset, starts: &[usize], batch_size: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in starts.chunks(batch_size.max(1)) {
        let batch = dataset.batch(chunk)?;
        let pred = model.predict(&batch)?;
        sum += pred.iter().zip(&batch.targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
        count += pred.len();
    }
    Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
}

fn thin(starts: &[usize], cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c > 0 && starts.len() > c => (0..c).map(|i| starts[i * starts.len() / c]).collect(),
        _ => starts.to_vec(),
    }
}

/// Trains with validation MSE over `set.val` driving early stopping.
pub fn train<T: Element>(model: &mut MoHets<T>, set: &TrainSet<'_>, cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainReport> {
    let val = thin(&set.val, cfg.max_val_windows);
    let dataset = set.dataset;
    let batch = cfg.batch_size;
    train_with(model, set, cfg, out, |m| {
        if val.is_empty() {
            Ok(None)
        } else {
            validation_mse(m, dataset, &val, batch).map(Some)
        }
    })
}

/// Trains with a caller-supplied validation score (lower is better; `None` skips early stopping).
pub fn train_with<T: Element, V>(
    model: &mut MoHets<T>,
    set: &TrainSet<'_>,
    cfg: &TrainConfig,
    out: &TrainOutputs,
    mut validate: V,
) -> Result<TrainReport>
where
    V: FnMut(&MoHets<T>) -> Result<Option<f64>>,
{
    cfg.validate()?;
    if set.train.is_empty() {
        return Err(Error::Dataset("no training windows".into()));
    }
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = match &out.dir {
        Some(dir) => Some(BufWriter::new(File::create(dir.join("train_log.jsonl"))?)),
        None => None,
    };
    let save = |model: &MoHets<T>, name: &str| -> Result<()> {
        match &out.dir {
            Some(dir) => checkpoint::save(model, &dir.join(name), out.meta.clone()),
            None => Ok(()),
        }
    };

    let per_epoch = set.train.len().div_ceil(cfg.batch_size);
    let planned = per_epoch * cfg.epochs;
    let total_steps = cfg.max_steps.map_or(planned, |m| m.min(planned));
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = set.train.clone();

    let mut report = TrainReport {
        steps: Vec::new(),
        epochs: Vec::new(),
        best_val_mse: None,
        best_epoch: None,
        stopped_early: false,
    };
    let mut best: Option<(f64, crate::model::ParamStore<T>)> = None;
    let mut since_best = 0;
    let mut step = 0;

    'epochs: for epoch in 0..cfg.epochs {
        if step >= total_steps {
            break;
        }
        order.shuffle(&mut rng);
        let (mut epoch_total, mut epoch_steps) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total_steps {
                break;
            }
            let batch = set.dataset.batch(chunk)?;
            let mut g = Graph::new(true, cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let p = model.params.bind(&mut g, true);
            let loss = batch_loss(model, &mut g, &p, &batch, &cfg.loss)?;
            let scalar = |v| g.value(v).item().as_f64();
            let record = StepRecord {
                step,
                lr: lr_at(step + 1, total_steps, cfg.max_lr, cfg.min_lr, cfg.warmup_fraction),
                huber: scalar(loss.huber),
                balance: scalar(loss.balance),
                total: scalar(loss.total),
                f_histogram: loss.forward.mohe.iter().map(|t| t.assignment.fraction.clone()).collect(),
            };
            let diverged = |model: &MoHets<T>, message: String| -> Result<TrainReport> {
                save(model, "last_good.bin")?;
                Err(Error::Diverged { step, message })
            };
            if !record.total.is_finite() {
                return diverged(model, format!("loss is {}", record.total));
            }
            let mut grads = g.backward(loss.total);
            let mut flat: Vec<Option<Vec<f64>>> = p
                .vars()
                .iter()
                .map(|&v| grads.take(v).map(|g| g.iter().map(|x| x.as_f64()).collect()))
                .collect();
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut flat, max);
            }
            if let Err(e) = opt.update(&mut model.params, &flat, record.lr) {
                return diverged(model, e.to_string());
            }
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                w.write_all(b"\n")?;
            }
            epoch_total += record.total;
            epoch_steps += 1;
            step += 1;
            report.steps.push(record);
        }

        let score = validate(model)?;
        let improved = match (score, &best) {
            (Some(s), Some((b, _))) => s < *b,
            (Some(s), None) => s.is_finite(),
            (None, _) => false,
        };
        if improved {
            let s = score.expect("improvement implies a score");
            best = Some((s, model.params.clone()));
            report.best_val_mse = Some(s);
            report.best_epoch = Some(epoch);
            since_best = 0;
            save(model, "best.bin")?;
        } else if score.is_some() {
            since_best += 1;
        }
        log::info!(
            "epoch {epoch}: {epoch_steps} steps, mean loss {:.5}, val {:?}",
            epoch_total / epoch_steps.max(1) as f64,
            score
        );
        report.epochs.push(EpochRecord {
            epoch,
            steps: epoch_steps,
            mean_total: epoch_total / epoch_steps.max(1) as f64,
            val_mse: score,
            improved,
        });
        if score.is_some() && since_best >= cfg.patience {
            report.stopped_early = true;
            break 'epochs;
        }
    }

    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    save(model, "final.bin")?;
    match best {
        Some((_, params)) => model.params = params,
        None => save(model, "best.bin")?,
    }
    Ok(report)
}
