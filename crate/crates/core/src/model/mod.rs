//! Masked-autoencoder parameterization: patch embedding, class and mask
//! tokens, positional tables, an encoder over visible patches, a lighter
//! decoder over the full token sequence, and the reconstruction and
//! classification heads.

mod checkpoint;
mod layout;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use layout::{BlockParams, Layout};

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch_mask::{check_divisible, patchify, MaskPlan};
use crate::rng::{self, tag};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmaeConfig {
    pub length: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_depth: usize,
    /// Zero for an encoder-only (fine-tuning) model.
    pub decoder_depth: usize,
    pub decoder_dim: usize,
    pub mlp_ratio: usize,
    /// Zero when there is no classification head.
    pub n_classes: usize,
}

impl Default for SmaeConfig {
    fn default() -> Self {
        SmaeConfig {
            length: 1000,
            patch_size: 100,
            embed_dim: 64,
            heads: 4,
            encoder_depth: 8,
            decoder_depth: 1,
            decoder_dim: 32,
            mlp_ratio: 4,
            n_classes: 0,
        }
    }
}

impl SmaeConfig {
    /// Small configuration for desk-scale runs on spectra of `length` points.
    pub fn desk(length: usize, patch_size: usize) -> Self {
        SmaeConfig {
            length,
            patch_size,
            embed_dim: 32,
            heads: 4,
            encoder_depth: 2,
            decoder_depth: 1,
            decoder_dim: 32,
            mlp_ratio: 2,
            n_classes: 0,
        }
    }

    pub fn n_patches(&self) -> usize {
        self.length / self.patch_size.max(1)
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder_depth > 0
    }

    pub fn has_head(&self) -> bool {
        self.n_classes > 0
    }

    pub fn validate(&self) -> Result<()> {
        check_divisible(self.length, self.patch_size)?;
        if self.embed_dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("embed_dim, heads and mlp_ratio must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not a multiple of {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.encoder_depth == 0 {
            return Err(Error::Config("encoder_depth must be at least 1".into()));
        }
        if self.has_decoder() && (self.decoder_dim == 0 || self.decoder_dim % self.heads != 0) {
            return Err(Error::Config(format!(
                "decoder_dim {} is not a positive multiple of {} heads",
                self.decoder_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Same encoder, no decoder, and a classification head over `n_classes`.
    pub fn for_finetune(&self, n_classes: usize) -> SmaeConfig {
        SmaeConfig {
            decoder_depth: 0,
            n_classes,
            ..self.clone()
        }
    }

    /// Whether `other` has an encoder with identical shapes.
    pub fn encoder_compatible(&self, other: &SmaeConfig) -> Result<()> {
        let pairs = [
            ("length", self.length, other.length),
            ("patch_size", self.patch_size, other.patch_size),
            ("embed_dim", self.embed_dim, other.embed_dim),
            ("heads", self.heads, other.heads),
            ("encoder_depth", self.encoder_depth, other.encoder_depth),
            ("mlp_ratio", self.mlp_ratio, other.mlp_ratio),
        ];
        for (name, a, b) in pairs {
            if a != b {
                return Err(Error::Config(format!("encoder {name} mismatch: {a} vs {b}")));
            }
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let block = |d: usize| {
            let hidden = self.mlp_ratio * d;
            2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * hidden + hidden) + (hidden * d + d)
        };
        let (p, d, dd, n) = (self.patch_size, self.embed_dim, self.decoder_dim, self.n_patches());
        let mut total = p * d + d + d + (n + 1) * d + self.encoder_depth * block(d) + 2 * d;
        if self.has_decoder() {
            total += d * dd + dd + dd + (n + 1) * dd + self.decoder_depth * block(dd) + 2 * dd + dd * p + p;
        }
        if self.has_head() {
            total += d * self.n_classes + self.n_classes;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
    Sinusoidal,
}

/// All learned tensors of the model, in a fixed name order.
#[derive(Debug, Clone, PartialEq)]
pub struct SmaeModel {
    config: SmaeConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Visible-token latents plus the handles Grad-CAM needs.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// `(N_visible + 1) × D`; row 0 is the class token.
    pub latents: Var,
    /// Normalized input of the last encoder block, `(N_visible + 1) × D`.
    pub last_block_input: Var,
}

fn truncated_normal(rng: &mut rng::Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Fixed sin/cos table, `rows × dim`.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; rows * dim];
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![rows, dim], data).expect("table shape")
}

impl SmaeModel {
    /// Freshly initialized model. Each tensor draws from its own seeded stream,
    /// keyed by name, so adding or dropping a head leaves the rest unchanged.
    pub fn new(config: SmaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let name_tag = name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(u64::from(b)));
            let stream = if name.starts_with("cls_head") { tag::HEAD_INIT } else { tag::INIT };
            let mut r = rng::rng_for(seed, &[stream, name_tag]);
            let tensor = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Normal => {
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| truncated_normal(&mut r, INIT_STD)).collect())?
                }
                Init::Sinusoidal => sinusoidal_table(shape[0], shape[1]),
            };
            names.push(name);
            params.push(tensor);
        }
        Ok(SmaeModel {
            config,
            layout,
            names,
            params,
        })
    }

    pub(crate) fn from_parts(config: SmaeConfig, named: HashMap<String, Tensor>) -> Result<Self> {
        let mut model = SmaeModel::new(config, 0)?;
        let mut named = named;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = named
                .remove(name)
                .ok_or_else(|| Error::Header(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Header(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Header(format!("unexpected parameter {extra}")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &SmaeConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Copies every tensor whose name and shape also exist in `source`;
    /// returns how many were copied.
    pub fn load_matching(&mut self, source: &SmaeModel) -> usize {
        let mut copied = 0;
        for (name, slot) in self.names.iter().zip(self.params.iter_mut()) {
            if let Some(src) = source.param(name) {
                if src.shape() == slot.shape() {
                    *slot = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Copy with the decoder dropped and a fresh classification head.
    pub fn to_classifier(&self, n_classes: usize, seed: u64) -> Result<SmaeModel> {
        let mut out = SmaeModel::new(self.config.for_finetune(n_classes), seed)?;
        out.load_matching(self);
        Ok(out)
    }

    /// Indices of parameters that belong to the classification head.
    pub fn head_indices(&self) -> Vec<usize> {
        self.layout.cls_head.map(|(w, b)| vec![w, b]).unwrap_or_default()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        tape.params(&self.params)
    }

    fn check_spectrum(&self, spectrum: &[f64], plan: &MaskPlan) -> Result<()> {
        if spectrum.len() != self.config.length {
            return Err(Error::shape("spectrum length", &[self.config.length], &[spectrum.len()]));
        }
        if plan.n_patches() != self.config.n_patches() {
            return Err(Error::Contract(format!(
                "mask plan covers {} patches, model expects {}",
                plan.n_patches(),
                self.config.n_patches()
            )));
        }
        Ok(())
    }

    fn block(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        b: &BlockParams,
        x: Var,
        dim: usize,
    ) -> Result<(Var, Var)> {
        let heads = self.config.heads;
        let dh = dim / heads;
        let h = tape.layer_norm(x, vars[b.norm1_gain], vars[b.norm1_bias], LAYER_NORM_EPS)?;
        let qkv = tape.linear(h, vars[b.qkv_weight], vars[b.qkv_bias])?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let q = tape.slice_cols(qkv, head * dh, (head + 1) * dh)?;
            let k = tape.slice_cols(qkv, dim + head * dh, dim + (head + 1) * dh)?;
            let v = tape.slice_cols(qkv, 2 * dim + head * dh, 2 * dim + (head + 1) * dh)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            outs.push(tape.matmul(attn, v)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let attn_out = tape.linear(merged, vars[b.proj_weight], vars[b.proj_bias])?;
        let x = tape.add(x, attn_out)?;
        let h2 = tape.layer_norm(x, vars[b.norm2_gain], vars[b.norm2_bias], LAYER_NORM_EPS)?;
        let hidden = tape.linear(h2, vars[b.fc1_weight], vars[b.fc1_bias])?;
        let hidden = tape.gelu(hidden);
        let mlp = tape.linear(hidden, vars[b.fc2_weight], vars[b.fc2_bias])?;
        Ok((tape.add(x, mlp)?, h))
    }

    /// Embeds the visible patches (at their original positions), prepends the
    /// class token, and runs the encoder.
    pub fn encode_on(&self, tape: &mut Tape, vars: &[Var], spectrum: &[f64], plan: &MaskPlan) -> Result<EncoderTrace> {
        self.check_spectrum(spectrum, plan)?;
        let l = &self.layout;
        let visible = plan.visible();
        let patches = patchify(spectrum, self.config.patch_size)?.into_tensor();
        let patches = tape.constant(patches);

        let cls_pos = tape.gather_rows(vars[l.pos_embed], &[0])?;
        let cls = tape.add(vars[l.cls_token], cls_pos)?;
        let x = if visible.is_empty() {
            cls
        } else {
            let vis = tape.gather_rows(patches, &visible)?;
            let emb = tape.linear(vis, vars[l.patch_weight], vars[l.patch_bias])?;
            let pos_rows: Vec<usize> = visible.iter().map(|i| i + 1).collect();
            let pos = tape.gather_rows(vars[l.pos_embed], &pos_rows)?;
            let emb = tape.add(emb, pos)?;
            tape.concat_rows(&[cls, emb])?
        };

        let mut x = x;
        let mut last_input = x;
        for b in &l.encoder {
            let (next, normed) = self.block(tape, vars, b, x, self.config.embed_dim)?;
            x = next;
            last_input = normed;
        }
        let latents = tape.layer_norm(x, vars[l.encoder_norm_gain], vars[l.encoder_norm_bias], LAYER_NORM_EPS)?;
        Ok(EncoderTrace {
            latents,
            last_block_input: last_input,
        })
    }

    /// Reassembles visible latents and mask tokens in patch order, runs the
    /// decoder and maps every patch token back to `P` intensities.
    pub fn decode_on(&self, tape: &mut Tape, vars: &[Var], latents: Var, plan: &MaskPlan) -> Result<Var> {
        let l = &self.layout;
        let dec = l
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder".into()))?;
        let n = self.config.n_patches();
        if plan.n_patches() != n {
            return Err(Error::Contract(format!(
                "mask plan covers {} patches, model expects {n}",
                plan.n_patches()
            )));
        }
        let n_visible = n - plan.n_masked();
        let rows = tape.shape(latents)[0];
        if rows != n_visible + 1 {
            return Err(Error::Contract(format!(
                "{rows} latent tokens do not match {n_visible} visible patches plus the class token"
            )));
        }
        let y = tape.linear(latents, vars[dec.embed_weight], vars[dec.embed_bias])?;
        let pool = tape.concat_rows(&[y, vars[dec.mask_token]])?;
        let mask_row = n_visible + 1;
        let mut index = Vec::with_capacity(n + 1);
        index.push(0);
        let mut next_visible = 1;
        for i in 0..n {
            if plan.is_masked(i) {
                index.push(mask_row);
            } else {
                index.push(next_visible);
                next_visible += 1;
            }
        }
        let full = tape.gather_rows(pool, &index)?;
        let mut x = tape.add(full, vars[dec.pos_embed])?;
        for b in &dec.blocks {
            x = self.block(tape, vars, b, x, self.config.decoder_dim)?.0;
        }
        let x = tape.layer_norm(x, vars[dec.norm_gain], vars[dec.norm_bias], LAYER_NORM_EPS)?;
        let patch_tokens: Vec<usize> = (1..=n).collect();
        let x = tape.gather_rows(x, &patch_tokens)?;
        let out = tape.linear(x, vars[dec.recon_weight], vars[dec.recon_bias])?;
        tape.reshape(out, &[self.config.length])
    }

    /// Raw class scores from the class-token latent of an unmasked encoding.
    pub fn classify_on(&self, tape: &mut Tape, vars: &[Var], spectrum: &[f64]) -> Result<(Var, EncoderTrace)> {
        let (w, b) = self.layout.cls_head.ok_or(Error::MissingHead)?;
        let trace = self.encode_on(tape, vars, spectrum, &MaskPlan::none(self.config.n_patches()))?;
        let cls = tape.gather_rows(trace.latents, &[0])?;
        let scores = tape.linear(cls, vars[w], vars[b])?;
        let scores = tape.reshape(scores, &[self.config.n_classes])?;
        Ok((scores, trace))
    }

    pub fn encode(&self, spectrum: &[f64], plan: &MaskPlan) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let trace = self.encode_on(&mut tape, &vars, spectrum, plan)?;
        Ok(tape.value(trace.latents).clone())
    }

    /// Decodes latents produced by [`SmaeModel::encode`] with the same plan.
    pub fn decode(&self, latents: &Tensor, plan: &MaskPlan) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let lat = tape.constant(latents.clone());
        let out = self.decode_on(&mut tape, &vars, lat, plan)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Encode followed by decode.
    pub fn reconstruct(&self, spectrum: &[f64], plan: &MaskPlan) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let trace = self.encode_on(&mut tape, &vars, spectrum, plan)?;
        let out = self.decode_on(&mut tape, &vars, trace.latents, plan)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Full-spectrum estimate in which every point comes from the decoder
    /// while its patch was masked. Each round shuffles the patches and masks
    /// them group by group, `round(ratio·N)` at a time, so every patch is
    /// predicted once per round; the rounds are averaged. A ratio that masks
    /// nothing returns the unmasked reconstruction.
    pub fn denoise(&self, spectrum: &[f64], ratio: f64, rounds: usize, seed: u64) -> Result<Vec<f64>> {
        let n = self.config.n_patches();
        let p = self.config.patch_size;
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
        }
        let k = crate::patch_mask::mask_count(n, ratio);
        if k == 0 {
            return self.reconstruct(spectrum, &MaskPlan::none(n));
        }
        let rounds = rounds.max(1);
        let mut acc = vec![0.0; self.config.length];
        for round in 0..rounds {
            let mut order: Vec<usize> = (0..n).collect();
            crate::spectra_io::shuffle(&mut order, &mut rng::rng_for(seed, &[tag::RECONSTRUCT, round as u64]));
            for group in order.chunks(k) {
                let plan = MaskPlan::from_indices(n, group)?;
                let recon = self.reconstruct(spectrum, &plan)?;
                for &patch in group {
                    for j in patch * p..(patch + 1) * p {
                        acc[j] += recon[j];
                    }
                }
            }
        }
        acc.iter_mut().for_each(|v| *v /= rounds as f64);
        Ok(acc)
    }

    pub fn classify(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (scores, _) = self.classify_on(&mut tape, &vars, spectrum)?;
        Ok(tape.value(scores).data().to_vec())
    }

    pub fn predict(&self, spectrum: &[f64]) -> Result<usize> {
        Ok(argmax(&self.classify(spectrum)?))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests;
