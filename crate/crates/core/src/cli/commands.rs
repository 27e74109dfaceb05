use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{resolve, write_atomic, CliError, CliResult, Common, CommonArgs, Outcome};
use crate::attribution::{class_mean_map, grad_cam};
use crate::error::{Error, Result};
use crate::metrics::{
    clustering_report, denoise_report, evaluate_classifier, extract_embeddings, kmeans, pca, EvalReport, Pooling,
};
use crate::model::{load_checkpoint, save_checkpoint, SmaeConfig, SmaeModel};
use crate::spectra_io::{generate_synthetic, load_csv, load_grouping, save_csv, MinMax, SpectraDataset, SynthConfig};
use crate::train::{self, ablation_sweep, AblationAxis, AblationData, FinetuneInit, TrainConfig, TrainMode, TrainOutcome};

pub(crate) type Finished = (Common, Value, Outcome);

fn finished<T: Serialize>(common: &Common, settings: &T, outcome: Outcome) -> CliResult<Finished> {
    Ok((common.clone(), serde_json::to_value(settings).map_err(Error::from)?, outcome))
}

pub(crate) fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

pub(crate) fn prepare_out_dir(common: &Common) -> Result<()> {
    std::fs::create_dir_all(&common.out_dir).map_err(|e| Error::io(&common.out_dir, e))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Loads a CSV, telling the label column and reference block apart by the
/// header names that [`save_csv`] writes.
pub(crate) fn load_data(path: &Path) -> Result<SpectraDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers()?.clone();
    let has_labels = header.get(0).is_some_and(|h| h.trim() == "label");
    let has_reference = header
        .iter()
        .any(|h| h.strip_prefix('r').is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())));
    load_csv(path, has_labels, has_reference)
}

fn prepare(data: SpectraDataset, common: &Common) -> SpectraDataset {
    if common.no_normalize {
        data
    } else {
        data.normalized()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn insert_report(outcome: &mut Outcome, report: &EvalReport) {
    for (k, v) in &report.metrics {
        outcome.metric(k, *v);
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Number of classes [default: 3]
    #[arg(long)]
    classes: Option<usize>,
    /// Spectra per class [default: 200]
    #[arg(long)]
    per_class: Option<usize>,
    /// Points per spectrum [default: 200]
    #[arg(long)]
    length: Option<usize>,
    /// Standard deviation of the additive Gaussian noise [default: 0.05]
    #[arg(long)]
    noise: Option<f64>,
    /// Gaussian peaks per class template [default: 5]
    #[arg(long)]
    peaks: Option<usize>,
    /// Largest random displacement of a spectrum, in points [default: 0]
    #[arg(long)]
    max_shift: Option<usize>,
    /// Output CSV, relative to --out-dir [default: data.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SynthSettings {
    #[serde(flatten)]
    common: Common,
    classes: usize,
    per_class: usize,
    length: usize,
    noise: f64,
    peaks: usize,
    max_shift: usize,
    out: PathBuf,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSettings {
            common: Common::default(),
            classes: d.n_classes,
            per_class: d.spectra_per_class,
            length: d.length,
            noise: d.noise_sigma,
            peaks: d.peaks_per_class,
            max_shift: d.max_shift,
            out: "data.csv".into(),
        }
    }
}

pub(crate) fn synth(args: SynthArgs) -> CliResult<Finished> {
    let s: SynthSettings = resolve(args.common.config.as_deref(), &args)?;
    let data = generate_synthetic(&SynthConfig {
        n_classes: s.classes,
        spectra_per_class: s.per_class,
        length: s.length,
        peaks_per_class: s.peaks,
        noise_sigma: s.noise,
        max_shift: s.max_shift,
        seed: s.common.seed,
        ..SynthConfig::default()
    })?;
    prepare_out_dir(&s.common)?;
    let out = s.common.output(&s.out);
    save_csv(&data, &out)?;
    let mut outcome = Outcome::default();
    outcome.artifact("data", &out);
    outcome.metric("spectra", data.len() as f64);
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- shared groups

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Points per patch; must divide the spectrum length [default: 20]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Encoder width [default: 32]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    heads: Option<usize>,
    /// Encoder blocks [default: 2]
    #[arg(long)]
    encoder_depth: Option<usize>,
    /// Decoder blocks [default: 1]
    #[arg(long)]
    decoder_depth: Option<usize>,
    /// Decoder width [default: 32]
    #[arg(long)]
    decoder_dim: Option<usize>,
    /// MLP hidden width as a multiple of the block width [default: 2]
    #[arg(long)]
    mlp_ratio: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ModelSettings {
    patch_size: usize,
    embed_dim: usize,
    heads: usize,
    encoder_depth: usize,
    decoder_depth: usize,
    decoder_dim: usize,
    mlp_ratio: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = SmaeConfig::desk(0, 20);
        ModelSettings {
            patch_size: d.patch_size,
            embed_dim: d.embed_dim,
            heads: d.heads,
            encoder_depth: d.encoder_depth,
            decoder_depth: d.decoder_depth,
            decoder_dim: d.decoder_dim,
            mlp_ratio: d.mlp_ratio,
        }
    }
}

impl ModelSettings {
    fn config(&self, length: usize) -> SmaeConfig {
        SmaeConfig {
            length,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            heads: self.heads,
            encoder_depth: self.encoder_depth,
            decoder_depth: self.decoder_depth,
            decoder_dim: self.decoder_dim,
            mlp_ratio: self.mlp_ratio,
            n_classes: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Spectra per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Linear warmup epochs [default: 5% of epochs]
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Decoupled weight decay [default: 0.05]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Share of the data held out for model selection [default: 0.1]
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainSettings {
    epochs: usize,
    batch_size: usize,
    lr: f64,
    warmup_epochs: Option<usize>,
    weight_decay: f64,
    val_fraction: f64,
}

impl TrainSettings {
    fn with(epochs: usize, batch_size: usize) -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            epochs,
            batch_size,
            lr: d.learning_rate,
            warmup_epochs: None,
            weight_decay: d.weight_decay,
            val_fraction: d.validation_fraction,
        }
    }

    fn config(&self, mode: TrainMode, common: &Common) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            warmup_epochs: self.warmup_epochs,
            weight_decay: self.weight_decay,
            seed: common.seed,
            validation_fraction: self.val_fraction,
            threads: common.threads,
            ..TrainConfig::default()
        }
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings::with(100, 16)
    }
}

fn train_metrics(outcome: &mut Outcome, result: &TrainOutcome) {
    outcome.metric("epochs_run", result.log.records.len() as f64);
    outcome.metric("best_epoch", result.log.best_epoch as f64);
    if let Some(last) = result.log.last() {
        outcome.metric("final_train_loss", last.train_loss);
    }
    if let Some(best) = result.log.records.iter().find(|r| r.epoch == result.log.best_epoch) {
        if let Some(v) = best.val_loss {
            outcome.metric("best_val_loss", v);
        }
        if let Some(v) = best.val_accuracy {
            outcome.metric("best_val_accuracy", v);
        }
    }
    for note in &result.log.notes {
        eprintln!("note: {note}");
    }
}

// ---------------------------------------------------------------- pretrain

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Training CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of patches hidden from the encoder [default: 0.5]
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Output checkpoint, relative to --out-dir [default: pretrain.smae]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PretrainSettings {
    #[serde(flatten)]
    common: Common,
    data: Option<PathBuf>,
    mask_ratio: f64,
    #[serde(flatten)]
    train: TrainSettings,
    #[serde(flatten)]
    model: ModelSettings,
    out: PathBuf,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            common: Common::default(),
            data: None,
            mask_ratio: TrainConfig::default().mask_ratio,
            train: TrainSettings::default(),
            model: ModelSettings::default(),
            out: "pretrain.smae".into(),
        }
    }
}

pub(crate) fn pretrain(args: PretrainArgs) -> CliResult<Finished> {
    let s: PretrainSettings = resolve(args.common.config.as_deref(), &args)?;
    let data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
    let smae = s.model.config(data.length());
    let cfg = TrainConfig {
        mask_ratio: s.mask_ratio,
        ..s.train.config(TrainMode::Pretrain, &s.common)
    };
    let result = pool(s.common.threads)?.install(|| train::pretrain(&data, &smae, &cfg))?;
    prepare_out_dir(&s.common)?;
    let ckpt = s.common.output(&s.out);
    let log = s.common.output(Path::new("pretrain.log.jsonl"));
    save_checkpoint(&result.checkpoint(&cfg), &ckpt)?;
    result.log.write_jsonl(&log)?;
    let mut outcome = Outcome::default();
    outcome.artifact("checkpoint", &ckpt);
    outcome.artifact("log", &log);
    train_metrics(&mut outcome, &result);
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- reconstruct

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Pretrained checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Spectra to denoise
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of patches masked per pass; 0 reconstructs unmasked [default: 0.5]
    #[arg(long)]
    ratio: Option<f64>,
    /// Passes, each masking every patch once [default: 4]
    #[arg(long)]
    rounds: Option<usize>,
    /// Output CSV, relative to --out-dir [default: recon.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ReconstructSettings {
    #[serde(flatten)]
    common: Common,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    ratio: f64,
    rounds: usize,
    out: PathBuf,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        ReconstructSettings {
            common: Common::default(),
            ckpt: None,
            data: None,
            ratio: 0.5,
            rounds: 4,
            out: "recon.csv".into(),
        }
    }
}

/// Denoises one raw spectrum, normalizing around the model when asked.
pub fn denoise_spectrum(model: &SmaeModel, raw: &[f64], ratio: f64, rounds: usize, seed: u64, normalize: bool) -> Result<Vec<f64>> {
    if normalize {
        let mm = MinMax::fit(raw);
        Ok(mm.invert(&model.denoise(&mm.apply(raw), ratio, rounds, seed)?))
    } else {
        model.denoise(raw, ratio, rounds, seed)
    }
}

pub(crate) fn reconstruct(args: ReconstructArgs) -> CliResult<Finished> {
    let s: ReconstructSettings = resolve(args.common.config.as_deref(), &args)?;
    let model = load_checkpoint(required(&s.ckpt, "ckpt")?)?.model;
    let data = load_data(required(&s.data, "data")?)?;
    if !model.config().has_decoder() {
        return Err(Error::Config("reconstruction needs a checkpoint with a decoder".into()).into());
    }
    let outputs = pool(s.common.threads)?.install(|| {
        data.spectra
            .par_iter()
            .map(|sp| denoise_spectrum(&model, &sp.intensities, s.ratio, s.rounds, s.common.seed, !s.common.no_normalize))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut recon = data.clone();
    for (sp, out) in recon.spectra.iter_mut().zip(outputs) {
        sp.intensities = out;
    }
    prepare_out_dir(&s.common)?;
    let out = s.common.output(&s.out);
    save_csv(&recon, &out)?;
    let mut outcome = Outcome::default();
    outcome.artifact("reconstruction", &out);
    if data.spectra.iter().all(|sp| sp.reference.is_some()) {
        insert_report(&mut outcome, &score_denoising(&data, &recon)?);
    }
    finished(&s.common, &s, outcome)
}

fn score_denoising(noisy: &SpectraDataset, recon: &SpectraDataset) -> Result<EvalReport> {
    if noisy.len() != recon.len() {
        return Err(Error::Config(format!(
            "{} noisy spectra but {} reconstructions",
            noisy.len(),
            recon.len()
        )));
    }
    let references: Vec<&[f64]> = noisy
        .spectra
        .iter()
        .zip(&recon.spectra)
        .enumerate()
        .map(|(i, (a, b))| {
            a.reference
                .as_deref()
                .or(b.reference.as_deref())
                .ok_or_else(|| Error::Config(format!("spectrum {i} has no clean reference")))
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<&[f64]> = noisy.spectra.iter().map(|s| s.intensities.as_slice()).collect();
    let outputs: Vec<&[f64]> = recon.spectra.iter().map(|s| s.intensities.as_slice()).collect();
    denoise_report(&inputs, &outputs, &references)
}

// ---------------------------------------------------------------- finetune

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Labeled training CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained checkpoint; omit to train from scratch
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Keep only the first N spectra of each class
    #[arg(long)]
    per_class: Option<usize>,
    /// Update only the classification head
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    head_only: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Output checkpoint, relative to --out-dir [default: finetune.smae]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct FinetuneSettings {
    #[serde(flatten)]
    common: Common,
    data: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    per_class: Option<usize>,
    head_only: bool,
    #[serde(flatten)]
    train: TrainSettings,
    #[serde(flatten)]
    model: ModelSettings,
    out: PathBuf,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            common: Common::default(),
            data: None,
            ckpt: None,
            per_class: None,
            head_only: false,
            train: TrainSettings::with(50, 8),
            model: ModelSettings::default(),
            out: "finetune.smae".into(),
        }
    }
}

pub(crate) fn finetune(args: FinetuneArgs) -> CliResult<Finished> {
    let s: FinetuneSettings = resolve(args.common.config.as_deref(), &args)?;
    let mut data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
    if let Some(k) = s.per_class {
        data = data.take_per_class(k);
    }
    let base = s.ckpt.as_deref().map(load_checkpoint).transpose()?;
    let scratch = s.model.config(data.length());
    let (mode, init) = match &base {
        Some(ck) => (TrainMode::Finetune, FinetuneInit::Pretrained(&ck.model)),
        None => (TrainMode::Scratch, FinetuneInit::Scratch(&scratch)),
    };
    let cfg = TrainConfig {
        head_only: s.head_only,
        ..s.train.config(mode, &s.common)
    };
    let result = pool(s.common.threads)?.install(|| train::finetune(init, &data, &cfg))?;
    prepare_out_dir(&s.common)?;
    let ckpt = s.common.output(&s.out);
    let log = s.common.output(Path::new("finetune.log.jsonl"));
    save_checkpoint(&result.checkpoint(&cfg), &ckpt)?;
    result.log.write_jsonl(&log)?;
    let mut outcome = Outcome::default();
    outcome.artifact("checkpoint", &ckpt);
    outcome.artifact("log", &log);
    train_metrics(&mut outcome, &result);
    outcome.metric("train_accuracy", train::accuracy(&result.model, &data)?);
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Classify,
    Denoise,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// What to score [default: classify]
    #[arg(long, value_enum)]
    task: Option<EvalTask>,
    /// Classifier checkpoint (classify)
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Labeled test CSV (classify) or noisy spectra with references (denoise)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reconstructions written by `reconstruct` (denoise) [default: recon.csv under --out-dir]
    #[arg(long)]
    recon: Option<PathBuf>,
    /// JSON object mapping class names to group names (classify)
    #[arg(long)]
    grouping: Option<PathBuf>,
    /// Report JSON, relative to --out-dir [default: eval.json]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalSettings {
    #[serde(flatten)]
    common: Common,
    task: EvalTask,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    recon: Option<PathBuf>,
    grouping: Option<PathBuf>,
    out: PathBuf,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            common: Common::default(),
            task: EvalTask::Classify,
            ckpt: None,
            data: None,
            recon: None,
            grouping: None,
            out: "eval.json".into(),
        }
    }
}

pub(crate) fn eval(args: EvalArgs) -> CliResult<Finished> {
    let s: EvalSettings = resolve(args.common.config.as_deref(), &args)?;
    let mut outcome = Outcome::default();
    let report = match s.task {
        EvalTask::Classify => {
            let model = load_checkpoint(required(&s.ckpt, "ckpt")?)?.model;
            let data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
            let grouping = s.grouping.as_deref().map(|g| load_grouping(g, &data)).transpose()?;
            pool(s.common.threads)?.install(|| evaluate_classifier(&model, &data, grouping.as_ref()))?
        }
        EvalTask::Denoise => {
            let noisy = load_data(required(&s.data, "data")?)?;
            let recon_path = s.recon.clone().unwrap_or_else(|| s.common.output(Path::new("recon.csv")));
            score_denoising(&noisy, &load_data(&recon_path)?)?
        }
    };
    prepare_out_dir(&s.common)?;
    let out = s.common.output(&s.out);
    write_json(&out, &report)?;
    outcome.artifact("report", &out);
    if let Some(csv) = report.confusion_csv() {
        let path = s.common.output(Path::new("confusion.csv"));
        write_text(&path, &csv)?;
        outcome.artifact("confusion", &path);
    }
    insert_report(&mut outcome, &report);
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Spectra to cluster
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint whose encoder embeds the spectra; omit to cluster raw spectra
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Embedding pooling: mean_tokens or class_token [default: mean_tokens]
    #[arg(long)]
    pooling: Option<String>,
    /// Number of clusters [default: number of classes in the data]
    #[arg(long)]
    k: Option<usize>,
    /// Lloyd iterations per restart [default: 300]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Project the features onto this many principal components before
    /// k-means (capped by the data); omit to cluster the features directly
    #[arg(long)]
    pca_dims: Option<usize>,
    /// Assignments CSV, relative to --out-dir [default: clusters.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ClusterSettings {
    #[serde(flatten)]
    common: Common,
    data: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    pooling: String,
    k: Option<usize>,
    max_iter: usize,
    pca_dims: Option<usize>,
    out: PathBuf,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            common: Common::default(),
            data: None,
            ckpt: None,
            pooling: "mean_tokens".into(),
            k: None,
            max_iter: 300,
            pca_dims: None,
            out: "clusters.csv".into(),
        }
    }
}

pub(crate) fn cluster(args: ClusterArgs) -> CliResult<Finished> {
    let s: ClusterSettings = resolve(args.common.config.as_deref(), &args)?;
    let data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
    let pooling: Pooling = s.pooling.parse()?;
    let features = match &s.ckpt {
        Some(path) => {
            let model = load_checkpoint(path)?.model;
            pool(s.common.threads)?.install(|| extract_embeddings(&model, &data, pooling))?
        }
        None => data.spectra.iter().map(|sp| sp.intensities.clone()).collect(),
    };
    let features = match s.pca_dims {
        Some(dims) => {
            let cap = features.len().min(features.first().map_or(0, Vec::len));
            pca(&features, dims.min(cap))?.projected
        }
        None => features,
    };
    let k = s.k.unwrap_or_else(|| data.n_classes());
    let fit = kmeans(&features, k, s.common.seed, s.max_iter)?;
    let labels = &fit.assignment.labels;

    prepare_out_dir(&s.common)?;
    let out = s.common.output(&s.out);
    let label_cell = |i: usize| data.spectra[i].label.map(|l| l.to_string()).unwrap_or_default();
    let mut text = String::from("index,cluster,label\n");
    for (i, c) in labels.iter().enumerate() {
        text.push_str(&format!("{i},{c},{}\n", label_cell(i)));
    }
    write_text(&out, &text)?;
    let mut outcome = Outcome::default();
    outcome.artifact("clusters", &out);
    outcome.metric("inertia", fit.inertia);
    if let Ok(projection) = pca(&features, 2) {
        let path = s.common.output(Path::new("cluster_pca.csv"));
        let mut text = String::from("pc1,pc2,cluster,label\n");
        for (i, (p, c)) in projection.projected.iter().zip(labels).enumerate() {
            text.push_str(&format!("{},{},{c},{}\n", p[0], p[1], label_cell(i)));
        }
        write_text(&path, &text)?;
        outcome.artifact("pca", &path);
    }
    if data.is_labeled() {
        insert_report(&mut outcome, &clustering_report(labels, &data.labels()?)?);
    }
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Labeled CSV; split into a pretraining pool and a test set
    #[arg(long)]
    data: Option<PathBuf>,
    /// Setting to sweep: mask_ratio, patch_size, encoder_depth, decoder_depth or epochs [default: mask_ratio]
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated values of the swept setting [default: 0,0.5,0.9]
    #[arg(long)]
    values: Option<String>,
    /// Share of the data held out for testing [default: 0.5]
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Labeled spectra per class used for fine-tuning [default: 10]
    #[arg(long)]
    labeled_per_class: Option<usize>,
    /// Mask ratio of arms that do not sweep it [default: 0.5]
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// Pretraining epochs of arms that do not sweep them [default: 60]
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Fine-tuning epochs [default: 50]
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Pretraining batch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fine-tuning batch size [default: 8]
    #[arg(long)]
    finetune_batch_size: Option<usize>,
    /// Learning rate of both stages [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Results CSV, relative to --out-dir [default: ablation.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AblateSettings {
    #[serde(flatten)]
    common: Common,
    data: Option<PathBuf>,
    axis: String,
    values: String,
    test_fraction: f64,
    labeled_per_class: usize,
    mask_ratio: f64,
    pretrain_epochs: usize,
    finetune_epochs: usize,
    batch_size: usize,
    finetune_batch_size: usize,
    lr: f64,
    #[serde(flatten)]
    model: ModelSettings,
    out: PathBuf,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            common: Common::default(),
            data: None,
            axis: "mask_ratio".into(),
            values: "0,0.5,0.9".into(),
            test_fraction: 0.5,
            labeled_per_class: 10,
            mask_ratio: 0.5,
            pretrain_epochs: 60,
            finetune_epochs: 50,
            batch_size: 16,
            finetune_batch_size: 8,
            lr: 1e-3,
            model: ModelSettings::default(),
            out: "ablation.csv".into(),
        }
    }
}

pub(crate) fn ablate(args: AblateArgs) -> CliResult<Finished> {
    let s: AblateSettings = resolve(args.common.config.as_deref(), &args)?;
    let axis = AblationAxis::parse(&s.axis, &s.values)?;
    let data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
    let (pool_set, test) = data.split(s.test_fraction, s.common.seed);
    let labeled = pool_set.take_per_class(s.labeled_per_class);
    let base = |mode, epochs, batch_size| TrainConfig {
        mode,
        epochs,
        batch_size,
        learning_rate: s.lr,
        mask_ratio: s.mask_ratio,
        seed: s.common.seed,
        validation_fraction: 0.0,
        threads: s.common.threads,
        ..TrainConfig::default()
    };
    let pre = base(TrainMode::Pretrain, s.pretrain_epochs, s.batch_size);
    let fine = base(TrainMode::Finetune, s.finetune_epochs, s.finetune_batch_size);
    let smae = s.model.config(data.length());
    let table = pool(s.common.threads)?.install(|| {
        ablation_sweep(
            &axis,
            &smae,
            &pre,
            &fine,
            AblationData {
                pretrain: &pool_set,
                finetune: &labeled,
                test: &test,
            },
        )
    })?;
    prepare_out_dir(&s.common)?;
    let csv = s.common.output(&s.out);
    let json = csv.with_extension("json");
    table.write(&csv, &json)?;
    let mut outcome = Outcome::default();
    outcome.artifact("table", &csv);
    outcome.artifact("table_json", &json);
    for row in &table.rows {
        outcome.metric(&format!("accuracy@{}", row.value), row.accuracy);
    }
    for arm in &table.skipped {
        eprintln!("skipped {}={}: {}", s.axis, arm.value, arm.reason);
    }
    finished(&s.common, &s, outcome)
}

// ---------------------------------------------------------------- gradcam

#[derive(Debug, Args, Serialize)]
pub struct GradcamArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Classifier checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Spectra CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Row of the spectrum to explain [default: 0]
    #[arg(long)]
    index: Option<usize>,
    /// Class to explain [default: the predicted class]
    #[arg(long)]
    target: Option<usize>,
    /// Average the maps of every labeled spectrum, one map per class
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    per_class: Option<bool>,
    /// Relevance CSV, relative to --out-dir [default: gradcam.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GradcamSettings {
    #[serde(flatten)]
    common: Common,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    index: usize,
    target: Option<usize>,
    per_class: bool,
    out: PathBuf,
}

impl Default for GradcamSettings {
    fn default() -> Self {
        GradcamSettings {
            common: Common::default(),
            ckpt: None,
            data: None,
            index: 0,
            target: None,
            per_class: false,
            out: "gradcam.csv".into(),
        }
    }
}

/// A relevance map with the spectrum it explains, as stored in `gradcam.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMap {
    pub name: String,
    pub target: usize,
    pub spectrum: Vec<f64>,
    pub relevance: Vec<f64>,
}

pub(crate) fn gradcam(args: GradcamArgs) -> CliResult<Finished> {
    let s: GradcamSettings = resolve(args.common.config.as_deref(), &args)?;
    let model = load_checkpoint(required(&s.ckpt, "ckpt")?)?.model;
    let data = prepare(load_data(required(&s.data, "data")?)?, &s.common);
    let mut maps = Vec::new();
    if s.per_class {
        for class in 0..model.config().n_classes {
            let Some(map) = class_mean_map(&model, &data, class)? else {
                continue;
            };
            let members: Vec<&Vec<f64>> = data
                .spectra
                .iter()
                .filter(|sp| sp.label == Some(class))
                .map(|sp| &sp.intensities)
                .collect();
            let mean = (0..data.length())
                .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                .collect();
            maps.push(NamedMap {
                name: format!("class{class}"),
                target: class,
                spectrum: mean,
                relevance: map.values,
            });
        }
    } else {
        let sp = data.spectra.get(s.index).ok_or_else(|| {
            Error::Config(format!("index {} outside {} spectra", s.index, data.len()))
        })?;
        let target = match s.target {
            Some(t) => t,
            None => model.predict(&sp.intensities)?,
        };
        let map = grad_cam(&model, &sp.intensities, target)?;
        maps.push(NamedMap {
            name: format!("spectrum{}_class{target}", s.index),
            target,
            spectrum: sp.intensities.clone(),
            relevance: map.values,
        });
    }
    prepare_out_dir(&s.common)?;
    let out = s.common.output(&s.out);
    let mut text = String::from("index");
    for m in &maps {
        text.push(',');
        text.push_str(&m.name);
    }
    text.push('\n');
    for j in 0..data.length() {
        text.push_str(&j.to_string());
        for m in &maps {
            text.push_str(&format!(",{}", m.relevance[j]));
        }
        text.push('\n');
    }
    write_text(&out, &text)?;
    let json = out.with_extension("json");
    write_json(&json, &maps)?;
    let mut outcome = Outcome::default();
    outcome.artifact("relevance", &out);
    outcome.artifact("maps", &json);
    outcome.metric("maps", maps.len() as f64);
    finished(&s.common, &s, outcome)
}
