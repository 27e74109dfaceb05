//! Denoising, classification and clustering metrics, plus the embedding
//! extraction that feeds clustering.

mod cluster;
mod scores;

pub use cluster::{kmeans, pca, ClusterAssignment, KMeans, Pca, KMEANS_RESTARTS};
pub use scores::{ami, assignment_brute_force, assignment_hungarian, clustering_accuracy, contingency, nmi};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SmaeModel;
use crate::patch_mask::MaskPlan;
use crate::spectra_io::{Grouping, SpectraDataset};

/// `sqrt(var(reference) / mse(estimate, reference))`, with `+∞` for an exact
/// match.
pub fn snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let residual = mse(estimate, reference)?;
    let n = reference.len() as f64;
    let mean = reference.iter().sum::<f64>() / n;
    let var = reference.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if reference.is_empty() || var == 0.0 {
        return Err(Error::UndefinedSignal);
    }
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((var / residual).sqrt())
}

pub fn mse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape("mse", &[estimate.len()], &[reference.len()]));
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    Ok(estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / estimate.len() as f64)
}

/// Mean SNR and MSE of noisy inputs and of their denoised versions against
/// clean references, with `snr_ratio` = mean after / mean before.
pub fn denoise_report(inputs: &[&[f64]], outputs: &[&[f64]], references: &[&[f64]]) -> Result<EvalReport> {
    if inputs.len() != outputs.len() || inputs.len() != references.len() {
        return Err(Error::shape(
            "denoise_report",
            &[inputs.len(), outputs.len()],
            &[references.len()],
        ));
    }
    if inputs.is_empty() {
        return Err(Error::Contract("no spectra to score".into()));
    }
    let n = inputs.len() as f64;
    let (mut snr_in, mut snr_out, mut mse_in, mut mse_out) = (0.0, 0.0, 0.0, 0.0);
    for ((x, y), r) in inputs.iter().zip(outputs).zip(references) {
        snr_in += snr(x, r)?;
        snr_out += snr(y, r)?;
        mse_in += mse(x, r)?;
        mse_out += mse(y, r)?;
    }
    let mut report = EvalReport::new("denoise");
    report.metrics.insert("snr_before".into(), snr_in / n);
    report.metrics.insert("snr_after".into(), snr_out / n);
    report.metrics.insert("snr_ratio".into(), snr_out / snr_in);
    report.metrics.insert("mse_before".into(), mse_in / n);
    report.metrics.insert("mse_after".into(), mse_out / n);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    /// Rows are true classes, columns predictions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<Vec<Vec<usize>>>,
    /// `None` for classes without samples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_class_accuracy: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_confusion: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_names: Option<Vec<String>>,
}

impl EvalReport {
    pub fn new(task: &str) -> Self {
        EvalReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            confusion: None,
            per_class_accuracy: None,
            group_confusion: None,
            class_names: None,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// `name: value` lines with four decimals.
    pub fn summary_lines(&self) -> Vec<String> {
        self.metrics
            .iter()
            .map(|(k, v)| format!("{k}: {v:.4}"))
            .collect()
    }

    /// Confusion matrix as CSV with a `truth\pred` corner cell.
    pub fn confusion_csv(&self) -> Option<String> {
        let m = self.confusion.as_ref()?;
        let name = |i: usize| {
            self.class_names
                .as_ref()
                .and_then(|n| n.get(i).cloned())
                .unwrap_or_else(|| i.to_string())
        };
        let mut out = String::from("truth\\pred");
        for j in 0..m.len() {
            out.push(',');
            out.push_str(&name(j));
        }
        out.push('\n');
        for (i, row) in m.iter().enumerate() {
            out.push_str(&name(i));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        Some(out)
    }
}

fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Accuracy and confusion for given predictions; with a grouping, both
/// sides are also mapped to groups.
pub fn classification_report(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
    grouping: Option<&Grouping>,
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("classification_report", &[pred.len()], &[truth.len()]));
    }
    let k = pred
        .iter()
        .chain(truth)
        .map(|&c| c + 1)
        .max()
        .unwrap_or(0)
        .max(n_classes);
    let confusion = confusion_matrix(pred, truth, k);
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let mut report = EvalReport::new("classify");
    let n = pred.len().max(1) as f64;
    report.metrics.insert("accuracy".into(), correct as f64 / n);
    report.per_class_accuracy = Some(
        confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect(),
    );
    report.confusion = Some(confusion);
    if let Some(g) = grouping {
        let gp = pred.iter().map(|&c| g.group_of(c)).collect::<Result<Vec<_>>>()?;
        let gt = truth.iter().map(|&c| g.group_of(c)).collect::<Result<Vec<_>>>()?;
        let kg = gp.iter().chain(&gt).map(|&c| c + 1).max().unwrap_or(0).max(g.n_groups());
        let gc = confusion_matrix(&gp, &gt, kg);
        let gcorrect: usize = (0..kg).map(|i| gc[i][i]).sum();
        report.metrics.insert("group_accuracy".into(), gcorrect as f64 / n);
        report.group_confusion = Some(gc);
    }
    Ok(report)
}

/// Runs the classifier over a labeled dataset.
pub fn evaluate_classifier(model: &SmaeModel, dataset: &SpectraDataset, grouping: Option<&Grouping>) -> Result<EvalReport> {
    let truth = dataset.labels()?;
    let pred = dataset
        .spectra
        .par_iter()
        .map(|s| model.predict(&s.intensities))
        .collect::<Result<Vec<_>>>()?;
    let mut report = classification_report(&pred, &truth, model.config().n_classes, grouping)?;
    report.class_names = dataset.class_names.clone();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    #[default]
    MeanTokens,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_token" | "cls" => Ok(Pooling::ClassToken),
            "mean_tokens" | "mean" => Ok(Pooling::MeanTokens),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

/// One row per spectrum: the unmasked encoder output, pooled. Mean pooling
/// averages the patch tokens (class token excluded).
pub fn extract_embeddings(model: &SmaeModel, dataset: &SpectraDataset, pooling: Pooling) -> Result<Vec<Vec<f64>>> {
    let n = model.config().n_patches();
    if !dataset.is_empty() && dataset.length() != model.config().length {
        return Err(Error::Config(format!(
            "dataset spectra have {} points, encoder expects {}",
            dataset.length(),
            model.config().length
        )));
    }
    dataset
        .spectra
        .par_iter()
        .map(|s| {
            let latents = model.encode(&s.intensities, &MaskPlan::none(n))?;
            let (rows, d) = latents.dims2()?;
            Ok(match pooling {
                Pooling::ClassToken => latents.row(0).to_vec(),
                Pooling::MeanTokens => {
                    let mut acc = vec![0.0; d];
                    for r in 1..rows {
                        for (a, v) in acc.iter_mut().zip(latents.row(r)) {
                            *a += v;
                        }
                    }
                    acc.iter_mut().for_each(|a| *a /= (rows - 1) as f64);
                    acc
                }
            })
        })
        .collect()
}

/// Clustering accuracy, NMI and AMI of `pred` against `truth`.
pub fn clustering_report(pred: &[usize], truth: &[usize]) -> Result<EvalReport> {
    let mut report = EvalReport::new("cluster");
    report.metrics.insert("acc".into(), clustering_accuracy(pred, truth)?);
    report.metrics.insert("nmi".into(), nmi(pred, truth)?);
    report.metrics.insert("ami".into(), ami(pred, truth)?);
    Ok(report)
}
