//! Adam training loop with validation-mDice early stopping, JSONL epoch
//! logs, and checkpointing.
//!
//! Determinism: every source of randomness in an epoch derives from
//! (config seed, epoch index), so resuming from a checkpoint at epoch k
//! replays exactly what an uninterrupted run would have done from k onward.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{epoch_batches, load_batch, Batch, DatasetIndex, Split};
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{evaluate_batch, MetricsReport, THRESHOLD};
use crate::model::SegModel;
use crate::params::ParamStore;
use crate::scalar::Elem;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One bias-corrected Adam update over all trainable parameters, using the
/// gradients accumulated in the store. `t` is the 1-based step counter.
pub fn adam_step<E: Elem>(ps: &mut ParamStore<E>, cfg: &TrainConfig, t: u64) -> Result<()> {
    assert!(t >= 1, "Adam step counter is 1-based");
    for (_, e) in ps.iter() {
        if e.trainable && !e.grad.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite gradient for parameter {:?} at step {t}",
                e.name
            )));
        }
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for e in ps.iter_mut() {
        let Some((m, v)) = &mut e.moment else { continue };
        for i in 0..e.value.numel() {
            let g = e.grad.data[i].as_f64();
            let mi = b1 * m.data[i].as_f64() + (1.0 - b1) * g;
            let vi = b2 * v.data[i].as_f64() + (1.0 - b2) * g * g;
            m.data[i] = E::from_f64(mi);
            v.data[i] = E::from_f64(vi);
            let update = cfg.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + cfg.adam_eps);
            e.value.data[i] = E::from_f64(e.value.data[i].as_f64() - update);
        }
    }
    Ok(())
}

/// Early stopping on a maximized metric: stops after `patience` consecutive
/// epochs without an improvement of more than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopper {
            patience,
            min_delta,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's metric. Returns (improved, should_stop).
    pub fn update(&mut self, metric: f64) -> (bool, bool) {
        if metric > self.best + self.min_delta {
            self.best = metric;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

/// One line of the JSONL epoch log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub logs: Vec<EpochLog>,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Run options beyond the optimizer hyperparameters.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// When set, writes best.ckpt, last.ckpt, and log.jsonl here.
    pub out_dir: Option<std::path::PathBuf>,
    /// Override the index's train/val splits (e.g. for overfit runs).
    pub train_indices: Option<Vec<usize>>,
    pub val_indices: Option<Vec<usize>>,
    /// First epoch to run (non-zero when resuming) and carried-over state.
    pub start_epoch: usize,
    pub adam_step0: u64,
    pub best_metric0: Option<f64>,
    /// Apply random augmentation to training batches.
    pub augment: bool,
    pub image_size: usize,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

impl TrainOptions {
    pub fn with_size(image_size: usize) -> Self {
        TrainOptions {
            image_size,
            ..Default::default()
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn to_elem_tensor<E: Elem>(t: &Tensor<f32>) -> Tensor<E> {
    Tensor::new(t.shape.clone(), t.data.iter().map(|&v| E::from_f64(v as f64)).collect())
}

/// Forward + loss on one batch. Training mode records gradients and updates
/// batch-norm running statistics.
fn batch_loss<E: Elem>(
    model: &mut SegModel<E>,
    batch: &Batch,
    loss_cfg: &LossConfig,
    training: bool,
) -> (f64, Option<Tape<E>>, Option<Tensor<E>>) {
    let mut tape = if training { Tape::new() } else { Tape::no_grad() };
    let x = tape.leaf(to_elem_tensor::<E>(&batch.images), false);
    let y = tape.constant(to_elem_tensor::<E>(&batch.masks));
    let pred = model.forward(&mut tape, x, training);
    let loss = total_loss(&mut tape, pred, y, loss_cfg);
    let loss_val = tape.value(loss).item().as_f64();
    if training {
        tape.backward(loss);
        (loss_val, Some(tape), None)
    } else {
        let p = tape.value(pred).clone();
        (loss_val, None, Some(p))
    }
}

/// Evaluates loss and metrics over a sample set in eval mode.
pub fn evaluate_split<E: Elem>(
    model: &mut SegModel<E>,
    index: &DatasetIndex,
    indices: &[usize],
    image_size: usize,
    batch_size: usize,
) -> Result<(f64, MetricsReport)> {
    assert!(!indices.is_empty(), "empty evaluation split");
    let loss_cfg = LossConfig::default();
    let mut loss_sum = 0.0;
    let mut preds: Vec<f32> = Vec::new();
    let mut masks: Vec<f32> = Vec::new();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = load_batch(index, chunk, image_size, None)?;
        let (l, _, p) = batch_loss(model, &batch, &loss_cfg, false);
        loss_sum += l * chunk.len() as f64;
        let p = p.unwrap();
        preds.extend(p.data.iter().map(|v| v.as_f64() as f32));
        masks.extend_from_slice(&batch.masks.data);
    }
    let n = indices.len();
    let shape = vec![n, 1, image_size, image_size];
    let report = evaluate_batch(
        &Tensor::<f32>::new(shape.clone(), preds),
        &Tensor::<f32>::new(shape, masks),
        THRESHOLD,
    );
    Ok((loss_sum / n as f64, report))
}

/// Full training loop: per-epoch shuffled batches, Adam updates, validation
/// mDice early stopping, and (optionally) best/last checkpoints plus a
/// JSONL log under `opts.out_dir`.
pub fn train<E: Elem>(
    model: &mut SegModel<E>,
    index: &DatasetIndex,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    cfg.validate()?;
    assert!(opts.image_size > 0 && opts.image_size % 16 == 0, "image size must be a positive multiple of 16");
    let train_idx = match &opts.train_indices {
        Some(v) => v.clone(),
        None => index.split_indices(Split::Train),
    };
    let val_idx = match &opts.val_indices {
        Some(v) => v.clone(),
        None => index.split_indices(Split::Val),
    };
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config("train and val splits must be non-empty".into()));
    }

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let loss_cfg = LossConfig::default();
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience, cfg.min_delta);
    if let Some(b) = opts.best_metric0 {
        stopper.best = b;
    }
    let mut logs = Vec::new();
    let mut adam_t = opts.adam_step0;
    let mut best_epoch = opts.start_epoch;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in opts.start_epoch..cfg.epochs {
        let eseed = epoch_seed(cfg.seed, epoch);
        let batches = epoch_batches(&train_idx, cfg.batch_size, eseed);
        let mut loss_sum = 0.0;
        for bidx in &batches {
            let aug = opts.augment.then_some(eseed);
            let batch = load_batch(index, bidx, opts.image_size, aug)?;
            let (l, tape, _) = batch_loss(model, &batch, &loss_cfg, true);
            if !l.is_finite() {
                return Err(Error::Diverged(format!(
                    "training loss became {l} at epoch {epoch}; last saved checkpoint retained"
                )));
            }
            loss_sum += l * bidx.len() as f64;
            model.ps.zero_grads();
            tape.unwrap().accumulate_param_grads(&mut model.ps);
            adam_t += 1;
            adam_step(&mut model.ps, cfg, adam_t)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let (val_loss, report) =
            evaluate_split(model, index, &val_idx, opts.image_size, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_dice: report.mdice,
            val_iou: report.miou,
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>3}: train_loss {:.4}  val_loss {:.4}  val_dice {:.4}  val_iou {:.4}",
                log.epoch, log.train_loss, log.val_loss, log.val_dice, log.val_iou
            );
        }
        if let Some(dir) = &opts.out_dir {
            append_jsonl(&dir.join("log.jsonl"), &log)?;
        }
        logs.push(log);
        epochs_run = epoch + 1;

        let (improved, stop) = stopper.update(report.mdice);
        if improved {
            best_epoch = epoch;
            if let Some(dir) = &opts.out_dir {
                Checkpoint::from_model(model, epoch, stopper.best, adam_t)
                    .save(&dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = &opts.out_dir {
            Checkpoint::from_model(model, epoch, stopper.best, adam_t)
                .save(&dir.join("last.ckpt"))?;
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainResult {
        logs,
        best_metric: stopper.best,
        best_epoch,
        epochs_run,
        stopped_early,
    })
}

fn append_jsonl(path: &Path, log: &EpochLog) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(log)?)?;
    Ok(())
}
