//! Gradient-weighted class activation maps over patch tokens.
//!
//! Activations are the normalized patch tokens entering the last encoder
//! block. The final patch-token outputs are not read by the class token, so
//! their gradient with respect to any class score is identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SmaeModel;
use crate::spectra_io::SpectraDataset;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// One value per wavelength in `[0, 1]`.
    pub values: Vec<f64>,
    /// Normalized relevance of each patch token.
    pub token_relevance: Vec<f64>,
    pub target: usize,
}

impl RelevanceMap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `index,relevance` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,relevance\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

fn normalize_max(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
}

pub fn grad_cam(model: &SmaeModel, spectrum: &[f64], target: usize) -> Result<RelevanceMap> {
    let cfg = model.config();
    if !cfg.has_head() {
        return Err(Error::MissingHead);
    }
    if target >= cfg.n_classes {
        return Err(Error::Contract(format!(
            "target class {target} outside {} classes",
            cfg.n_classes
        )));
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (scores, trace) = model.classify_on(&mut tape, &vars, spectrum)?;
    let row = tape.reshape(scores, &[1, cfg.n_classes])?;
    let picked = tape.slice_cols(row, target, target + 1)?;
    let score = tape.sum(picked);
    let grads = tape.backward(score)?.wrt(trace.last_block_input);
    let acts = tape.value(trace.last_block_input);

    let (rows, d) = acts.dims2()?;
    let n = rows - 1;
    let alpha: Vec<f64> = (0..d)
        .map(|c| (1..rows).map(|t| grads.get2(t, c)).sum::<f64>() / n as f64)
        .collect();
    let mut tokens: Vec<f64> = (1..rows)
        .map(|t| {
            let s: f64 = (0..d).map(|c| alpha[c] * acts.get2(t, c)).sum();
            s.max(0.0)
        })
        .collect();
    normalize_max(&mut tokens);
    let p = cfg.patch_size;
    let values = tokens
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, p))
        .collect();
    Ok(RelevanceMap {
        values,
        token_relevance: tokens,
        target,
    })
}

/// Mean of the maps of every spectrum labeled `class`, renormalized to a
/// maximum of 1. `None` when the class has no spectra.
pub fn class_mean_map(model: &SmaeModel, dataset: &SpectraDataset, class: usize) -> Result<Option<RelevanceMap>> {
    let members: Vec<&Vec<f64>> = dataset
        .spectra
        .iter()
        .filter(|s| s.label == Some(class))
        .map(|s| &s.intensities)
        .collect();
    if members.is_empty() {
        return Ok(None);
    }
    let mut values = vec![0.0; model.config().length];
    let mut tokens = vec![0.0; model.config().n_patches()];
    for s in &members {
        let m = grad_cam(model, s, class)?;
        values.iter_mut().zip(&m.values).for_each(|(a, b)| *a += b);
        tokens.iter_mut().zip(&m.token_relevance).for_each(|(a, b)| *a += b);
    }
    normalize_max(&mut values);
    normalize_max(&mut tokens);
    Ok(Some(RelevanceMap {
        values,
        token_relevance: tokens,
        target: class,
    }))
}
