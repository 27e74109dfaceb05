//! Masked-reconstruction pretraining, classification fine-tuning, the
//! losses they minimize and ablation sweeps over both.

mod ablation;
mod optim;

pub use ablation::{ablation_sweep, AblationAxis, AblationData, AblationRow, AblationTable, SkippedArm};
pub use optim::{optimizer_step, AdamWHyper, AdamWState};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, SmaeConfig, SmaeModel};
use crate::patch_mask::{sample_mask, MaskPlan};
use crate::rng::{self, tag};
use crate::spectra_io::{shuffle, SpectraDataset};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    Finetune,
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup length; `None` means 5% of `epochs`, rounded up.
    pub warmup_epochs: Option<usize>,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    /// Share of the training data held out for validation when no explicit
    /// validation set is given.
    pub validation_fraction: f64,
    /// Fine-tuning updates only the classification head.
    pub head_only: bool,
    /// Worker threads for per-sample gradients; results do not depend on it,
    /// so it is left out of serialized configs and checkpoints.
    #[serde(skip, default = "one_thread")]
    pub threads: usize,
}

fn one_thread() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Pretrain,
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_epochs: None,
            weight_decay: 0.05,
            mask_ratio: 0.5,
            seed: 0,
            validation_fraction: 0.1,
            head_only: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs
            .unwrap_or_else(|| (self.epochs as f64 * 0.05).ceil() as usize)
    }

    fn hyper(&self, learning_rate: f64) -> AdamWHyper {
        AdamWHyper {
            learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWHyper::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
}

/// Per-epoch history. Wall-clock timings are kept apart from the records so
/// the serialized log is reproducible; equality ignores them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.best_epoch == other.best_epoch && self.notes == other.notes
    }
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model by validation criterion (last epoch without validation).
    pub model: SmaeModel,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            metadata: serde_json::json!({
                "train": config,
                "best_epoch": self.log.best_epoch,
                "epochs_run": self.log.records.len(),
                "final": self.log.last(),
                "notes": self.log.notes,
            }),
        }
    }
}

/// Mean squared error over the points of masked patches only. An empty mask
/// gives 0.
pub fn masked_mse_loss(reconstruction: &[f64], target: &[f64], plan: &MaskPlan, patch_size: usize) -> Result<f64> {
    if reconstruction.len() != target.len() {
        return Err(Error::shape("masked_mse_loss", &[reconstruction.len()], &[target.len()]));
    }
    if plan.n_patches() * patch_size != target.len() {
        return Err(Error::Contract(format!(
            "plan over {} patches of {patch_size} does not cover {} points",
            plan.n_patches(),
            target.len()
        )));
    }
    let positions = plan.masked_positions(patch_size);
    if positions.is_empty() {
        return Ok(0.0);
    }
    Ok(positions
        .iter()
        .map(|&p| (reconstruction[p] - target[p]).powi(2))
        .sum::<f64>()
        / positions.len() as f64)
}

/// `-log softmax(scores)[label]`.
pub fn cross_entropy_loss(scores: &[f64], label: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(scores.to_vec()));
    let l = tape.cross_entropy(s, label)?;
    Ok(tape.value(l).data()[0])
}

/// Pretraining loss of one spectrum and its parameter gradients.
pub fn pretrain_loss_and_grads(model: &SmaeModel, spectrum: &[f64], plan: &MaskPlan) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let trace = model.encode_on(&mut tape, &vars, spectrum, plan)?;
    let recon = model.decode_on(&mut tape, &vars, trace.latents, plan)?;
    let loss = tape.masked_mse(recon, spectrum, &plan.masked_positions(model.config().patch_size))?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?.for_params(model.params());
    Ok((value, grads))
}

/// Classification loss of one labeled spectrum and its parameter gradients.
pub fn finetune_loss_and_grads(model: &SmaeModel, spectrum: &[f64], label: usize) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (scores, _) = model.classify_on(&mut tape, &vars, spectrum)?;
    let loss = tape.cross_entropy(scores, label)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?.for_params(model.params());
    Ok((value, grads))
}

struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Workers(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(|p| Workers(Some(p)))
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    /// Maps `f` over `items`, preserving order.
    fn map<T, F>(&self, items: &[usize], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.0 {
            Some(pool) => pool.install(|| items.par_iter().map(|&i| f(i)).collect()),
            None => items.iter().map(|&i| f(i)).collect(),
        }
    }
}

/// Mean loss and gradient over a batch, reduced in batch order.
fn batch_mean(results: Vec<Result<(f64, Vec<Tensor>)>>) -> Result<(f64, Vec<Tensor>)> {
    let count = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter
        .next()
        .ok_or_else(|| Error::Contract("empty batch".into()))??;
    for r in iter {
        let (l, g) = r?;
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= count);
    }
    Ok((loss / count, grads))
}

fn decay_mask(model: &SmaeModel) -> Vec<bool> {
    model.names().iter().map(|n| n.ends_with(".weight")).collect()
}

fn check_length(dataset: &SpectraDataset, config: &SmaeConfig) -> Result<()> {
    if !dataset.is_empty() && dataset.length() != config.length {
        return Err(Error::Config(format!(
            "dataset spectra have {} points, model expects {} (patch size {})",
            dataset.length(),
            config.length,
            config.patch_size
        )));
    }
    Ok(())
}

/// Learning rate with linear warmup over the first `warmup_steps` steps.
fn scheduled_lr(base: f64, step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    }
}

/// Validation masks come from a fixed stream keyed by spectrum index, so every
/// epoch is scored on the same plans.
pub fn validation_loss(model: &SmaeModel, data: &SpectraDataset, ratio: f64, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let n = model.config().n_patches();
    let p = model.config().patch_size;
    let mut total = 0.0;
    for (i, s) in data.spectra.iter().enumerate() {
        let plan = sample_mask(n, ratio, &mut rng::rng_for(seed, &[tag::VALIDATION_MASK, i as u64]))?;
        let recon = model.reconstruct(&s.intensities, &plan)?;
        total += masked_mse_loss(&recon, &s.intensities, &plan, p)?;
    }
    Ok(total / data.len() as f64)
}

pub fn accuracy(model: &SmaeModel, data: &SpectraDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let labels = data.labels()?;
    let mut correct = 0usize;
    for (s, &l) in data.spectra.iter().zip(&labels) {
        if model.predict(&s.intensities)? == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Pretrains on `dataset`, holding out `validation_fraction` for validation.
pub fn pretrain(dataset: &SpectraDataset, smae: &SmaeConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, val) = dataset.split(config.validation_fraction, config.seed);
    pretrain_with_validation(&train, &val, smae, config)
}

/// Masked-reconstruction pretraining. Labels, if any, are ignored. The best
/// epoch by validation loss is kept (ties go to the earlier epoch).
pub fn pretrain_with_validation(
    train: &SpectraDataset,
    val: &SpectraDataset,
    smae: &SmaeConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    smae.validate()?;
    if !smae.has_decoder() {
        return Err(Error::Config("pretraining needs decoder_depth >= 1".into()));
    }
    check_length(train, smae)?;
    check_length(val, smae)?;
    if train.is_empty() {
        return Err(Error::Config("no training spectra".into()));
    }

    let mut model = SmaeModel::new(SmaeConfig { n_classes: 0, ..smae.clone() }, config.seed)?;
    let mut log = TrainLog::default();
    if crate::patch_mask::mask_count(smae.n_patches(), config.mask_ratio) == 0 {
        log.notes.push(format!(
            "mask ratio {} hides no patches; the pretext loss is identically zero",
            config.mask_ratio
        ));
    }
    let workers = Workers::new(config.threads)?;
    let decay = decay_mask(&model);
    let update = vec![true; model.params().len()];
    let mut state = AdamWState::new(model.params());
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup() * steps_per_epoch;
    let n_patches = smae.n_patches();
    let mut best: Option<(f64, SmaeModel)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle(&mut order, &mut rng::rng_for(config.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = workers.map(batch, |i| {
                let mut r = rng::rng_for(config.seed, &[tag::MASK, epoch as u64, i as u64]);
                let plan = sample_mask(n_patches, config.mask_ratio, &mut r)?;
                pretrain_loss_and_grads(&model, &train.spectra[i].intensities, &plan)
            });
            let (loss, grads) = batch_mean(results)?;
            let hyper = config.hyper(scheduled_lr(config.learning_rate, step, warmup_steps));
            optimizer_step(model.params_mut(), &grads, &mut state, &hyper, &decay, &update)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(validation_loss(&model, val, config.mask_ratio, config.seed)?)
        };
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_accuracy: None,
        });
        log.epoch_seconds.push(started.elapsed().as_secs_f64());

        let score = val_loss.unwrap_or(train_loss);
        let improved = match &best {
            None => true,
            Some((b, _)) => val_loss.is_none() || score < *b,
        };
        if improved {
            best = Some((score, model.clone()));
            log.best_epoch = epoch + 1;
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok(TrainOutcome { model, log })
}

/// Starting point for fine-tuning.
#[derive(Debug, Clone, Copy)]
pub enum FinetuneInit<'a> {
    /// Reuse the encoder of a pretrained model; its decoder is dropped.
    Pretrained(&'a SmaeModel),
    /// Train from freshly initialized weights with this architecture.
    Scratch(&'a SmaeConfig),
}

pub fn finetune(init: FinetuneInit<'_>, dataset: &SpectraDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, val) = dataset.split(config.validation_fraction, config.seed);
    finetune_with_validation(init, &train, &val, config)
}

/// Supervised training of encoder and head with cross-entropy. With a
/// non-empty validation set the best epoch by validation accuracy is kept
/// (ties go to the earlier epoch); otherwise the last epoch is returned.
pub fn finetune_with_validation(
    init: FinetuneInit<'_>,
    train: &SpectraDataset,
    val: &SpectraDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training spectra".into()));
    }
    let labels = train.labels()?;
    if !val.is_empty() {
        val.labels()?;
    }
    let n_classes = train.n_classes().max(val.n_classes());
    let mut model = match init {
        FinetuneInit::Pretrained(base) => {
            check_length(train, base.config())?;
            base.to_classifier(n_classes, config.seed)?
        }
        FinetuneInit::Scratch(cfg) => {
            check_length(train, cfg)?;
            SmaeModel::new(cfg.for_finetune(n_classes), config.seed)?
        }
    };
    check_length(val, model.config())?;

    let workers = Workers::new(config.threads)?;
    let decay = decay_mask(&model);
    let update: Vec<bool> = if config.head_only {
        let head = model.head_indices();
        (0..model.params().len()).map(|i| head.contains(&i)).collect()
    } else {
        vec![true; model.params().len()]
    };
    let mut state = AdamWState::new(model.params());
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup() * steps_per_epoch;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, SmaeModel)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle(&mut order, &mut rng::rng_for(config.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = workers.map(batch, |i| {
                finetune_loss_and_grads(&model, &train.spectra[i].intensities, labels[i])
            });
            let (loss, grads) = batch_mean(results)?;
            let hyper = config.hyper(scheduled_lr(config.learning_rate, step, warmup_steps));
            optimizer_step(model.params_mut(), &grads, &mut state, &hyper, &decay, &update)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let vl = workers
                .map(&(0..val.len()).collect::<Vec<_>>(), |i| {
                    let s = &val.spectra[i];
                    cross_entropy_loss(&model.classify(&s.intensities)?, s.label.unwrap_or(0))
                })
                .into_iter()
                .collect::<Result<Vec<f64>>>()?;
            (
                Some(vl.iter().sum::<f64>() / val.len() as f64),
                Some(accuracy(&model, val)?),
            )
        };
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        log.epoch_seconds.push(started.elapsed().as_secs_f64());

        let improved = match (&best, val_accuracy) {
            (None, _) | (_, None) => true,
            (Some((b, _)), Some(acc)) => acc > *b,
        };
        if improved {
            best = Some((val_accuracy.unwrap_or(0.0), model.clone()));
            log.best_epoch = epoch + 1;
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests;
