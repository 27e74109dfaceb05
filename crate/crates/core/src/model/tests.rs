use super::*;
use crate::rng::rng_for;
use rand::Rng as _;

type Rows = Vec<Vec<f64>>;

fn tiny(length: usize, patch: usize) -> SmaeConfig {
    SmaeConfig {
        length,
        patch_size: patch,
        embed_dim: 8,
        heads: 2,
        encoder_depth: 2,
        decoder_depth: 1,
        decoder_dim: 8,
        mlp_ratio: 2,
        n_classes: 3,
    }
}

fn spectrum(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng_for(seed, &[1234]);
    (0..len).map(|_| r.random::<f64>()).collect()
}

/// Perturbs every parameter so zero-initialized biases and unit gains do not
/// hide indexing mistakes.
fn jitter(model: &mut SmaeModel, seed: u64) {
    let mut r = rng_for(seed, &[77]);
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

// ---- loop-based forward pass, independent of the tape ----

fn p<'a>(m: &'a SmaeModel, name: &str) -> &'a Tensor {
    m.param(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

fn naive_linear(x: &Rows, w: &Tensor, b: &Tensor) -> Rows {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..n)
                .map(|j| b.data()[j] + (0..k).map(|i| row[i] * w.get2(i, j)).sum::<f64>())
                .collect()
        })
        .collect()
}

fn naive_norm(x: &Rows, g: &Tensor, b: &Tensor) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + LAYER_NORM_EPS).sqrt() * g.data()[j] + b.data()[j])
                .collect()
        })
        .collect()
}

fn naive_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn naive_block(m: &SmaeModel, prefix: &str, x: &Rows, heads: usize) -> Rows {
    let dim = x[0].len();
    let dh = dim / heads;
    let h = naive_norm(x, p(m, &format!("{prefix}.norm1.gain")), p(m, &format!("{prefix}.norm1.bias")));
    let qkv = naive_linear(&h, p(m, &format!("{prefix}.attn.qkv.weight")), p(m, &format!("{prefix}.attn.qkv.bias")));
    let t = x.len();
    let mut merged = vec![vec![0.0; dim]; t];
    for head in 0..heads {
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| {
                    (0..dh).map(|c| qkv[i][head * dh + c] * qkv[j][dim + head * dh + c]).sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..t {
                let a = (scores[j] - max).exp() / z;
                for c in 0..dh {
                    merged[i][head * dh + c] += a * qkv[j][2 * dim + head * dh + c];
                }
            }
        }
    }
    let attn = naive_linear(&merged, p(m, &format!("{prefix}.attn.proj.weight")), p(m, &format!("{prefix}.attn.proj.bias")));
    let x: Rows = x.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
    let h2 = naive_norm(&x, p(m, &format!("{prefix}.norm2.gain")), p(m, &format!("{prefix}.norm2.bias")));
    let hid: Rows = naive_linear(&h2, p(m, &format!("{prefix}.mlp.fc1.weight")), p(m, &format!("{prefix}.mlp.fc1.bias")))
        .into_iter()
        .map(|r| r.into_iter().map(naive_gelu).collect())
        .collect();
    let mlp = naive_linear(&hid, p(m, &format!("{prefix}.mlp.fc2.weight")), p(m, &format!("{prefix}.mlp.fc2.bias")));
    x.iter().zip(&mlp).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect()
}

fn naive_encode(m: &SmaeModel, x: &[f64], visible: &[usize]) -> Rows {
    let c = m.config();
    let ps = c.patch_size;
    let pos = p(m, "pos_embed");
    let mut tokens: Rows = vec![p(m, "cls_token").row(0).iter().zip(pos.row(0)).map(|(a, b)| a + b).collect()];
    for &i in visible {
        let patch = vec![x[i * ps..(i + 1) * ps].to_vec()];
        let e = naive_linear(&patch, p(m, "patch_embed.weight"), p(m, "patch_embed.bias"));
        tokens.push(e[0].iter().zip(pos.row(i + 1)).map(|(a, b)| a + b).collect());
    }
    for d in 0..c.encoder_depth {
        tokens = naive_block(m, &format!("encoder.{d}"), &tokens, c.heads);
    }
    naive_norm(&tokens, p(m, "encoder.norm.gain"), p(m, "encoder.norm.bias"))
}

fn naive_decode(m: &SmaeModel, latents: &Rows, plan: &MaskPlan) -> Vec<f64> {
    let c = m.config();
    let y = naive_linear(latents, p(m, "decoder.embed.weight"), p(m, "decoder.embed.bias"));
    let mask = p(m, "mask_token").row(0).to_vec();
    let mut tokens = vec![y[0].clone()];
    let mut next = 1;
    for i in 0..c.n_patches() {
        if plan.is_masked(i) {
            tokens.push(mask.clone());
        } else {
            tokens.push(y[next].clone());
            next += 1;
        }
    }
    let pos = p(m, "decoder.pos_embed");
    let mut tokens: Rows = tokens
        .iter()
        .enumerate()
        .map(|(r, t)| t.iter().zip(pos.row(r)).map(|(a, b)| a + b).collect())
        .collect();
    for d in 0..c.decoder_depth {
        tokens = naive_block(m, &format!("decoder.{d}"), &tokens, c.heads);
    }
    let tokens = naive_norm(&tokens, p(m, "decoder.norm.gain"), p(m, "decoder.norm.bias"));
    naive_linear(&tokens[1..].to_vec(), p(m, "recon_head.weight"), p(m, "recon_head.bias")).concat()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

// ---- tests ----

#[test]
fn default_config_has_ten_patches_of_a_thousand_points() {
    let c = SmaeConfig::default();
    assert_eq!((c.encoder_depth, c.decoder_depth, c.patch_size, c.length), (8, 1, 100, 1000));
    assert_eq!(c.n_patches(), 10);
    c.validate().unwrap();
}

#[test]
fn config_validation() {
    let mut c = tiny(20, 5);
    c.embed_dim = 7;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = tiny(20, 6);
    assert!(matches!(c.validate(), Err(Error::Divisibility { .. })));
    let mut c = tiny(20, 5);
    c.encoder_depth = 0;
    assert!(c.validate().is_err());
}

#[test]
fn parameter_count_matches_listing() {
    for cfg in [tiny(20, 5), tiny(20, 5).for_finetune(4), SmaeConfig::default(), SmaeConfig::desk(200, 20)] {
        let m = SmaeModel::new(cfg.clone(), 1).unwrap();
        let listed: usize = m.params().iter().map(|t| t.shape().iter().product::<usize>()).sum();
        assert_eq!(listed, cfg.parameter_count());
        assert_eq!(m.parameter_count(), cfg.parameter_count());
    }
}

#[test]
fn init_follows_scheme() {
    let m = SmaeModel::new(tiny(20, 5), 3).unwrap();
    assert!(p(&m, "encoder.0.norm1.gain").data().iter().all(|&v| v == 1.0));
    assert!(p(&m, "encoder.0.attn.qkv.bias").data().iter().all(|&v| v == 0.0));
    assert!(p(&m, "patch_embed.weight").data().iter().all(|&v| v.abs() <= 0.04));
    assert_eq!(p(&m, "pos_embed"), &sinusoidal_table(5, 8));
    assert_eq!(SmaeModel::new(tiny(20, 5), 3).unwrap(), m);
    assert_ne!(SmaeModel::new(tiny(20, 5), 4).unwrap(), m);
}

#[test]
fn token_counts() {
    let m = SmaeModel::new(SmaeConfig { length: 100, patch_size: 10, ..tiny(100, 10) }, 1).unwrap();
    let x = spectrum(100, 1);
    assert_eq!(m.encode(&x, &MaskPlan::none(10)).unwrap().shape(), &[11, 8]);
    let plan = MaskPlan::from_indices(10, &[0, 2, 4, 6, 8]).unwrap();
    assert_eq!(m.encode(&x, &plan).unwrap().shape(), &[6, 8]);
}

#[test]
fn encoder_matches_loop_oracle() {
    let mut m = SmaeModel::new(tiny(20, 5), 5).unwrap();
    jitter(&mut m, 5);
    let x = spectrum(20, 2);
    for masked in [vec![], vec![1], vec![0, 3], vec![0, 1, 2]] {
        let plan = MaskPlan::from_indices(4, &masked).unwrap();
        let got = m.encode(&x, &plan).unwrap();
        let want = naive_encode(&m, &x, &plan.visible());
        assert_close(got.data(), &want.concat(), 1e-12);
    }
}

#[test]
fn visible_token_uses_its_own_position_row() {
    let mut m = SmaeModel::new(tiny(20, 5), 6).unwrap();
    jitter(&mut m, 6);
    let x = spectrum(20, 3);
    // only patch 2 visible: its token must carry pos_embed row 3
    let plan = MaskPlan::from_indices(4, &[0, 1, 3]).unwrap();
    let got = m.encode(&x, &plan).unwrap();
    assert_close(got.data(), &naive_encode(&m, &x, &[2]).concat(), 1e-12);
    // and the same patch content at index 0 encodes differently
    let mut y = x.clone();
    y[..5].copy_from_slice(&x[10..15]);
    let other = m.encode(&y, &MaskPlan::from_indices(4, &[1, 2, 3]).unwrap()).unwrap();
    assert!(got.max_abs_diff(&other) > 1e-6);
}

#[test]
fn encoding_ignores_sampling_order() {
    let m = SmaeModel::new(tiny(20, 5), 7).unwrap();
    let x = spectrum(20, 4);
    let a = m.encode(&x, &MaskPlan::from_indices(4, &[3, 0]).unwrap()).unwrap();
    let b = m.encode(&x, &MaskPlan::from_indices(4, &[0, 3]).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decoder_matches_loop_oracle() {
    let mut m = SmaeModel::new(tiny(20, 5), 8).unwrap();
    jitter(&mut m, 8);
    let x = spectrum(20, 5);
    for masked in [vec![], vec![2], vec![0, 1, 3], vec![0, 1, 2, 3]] {
        let plan = MaskPlan::from_indices(4, &masked).unwrap();
        let lat = m.encode(&x, &plan).unwrap();
        let got = m.decode(&lat, &plan).unwrap();
        assert_eq!(got.len(), 20);
        let rows: Rows = (0..lat.shape()[0]).map(|r| lat.row(r).to_vec()).collect();
        assert_close(&got, &naive_decode(&m, &rows, &plan), 1e-12);
    }
}

#[test]
fn single_patch_fully_masked() {
    // N = 1, r = 1: the only patch token entering the decoder is the mask token
    let cfg = SmaeConfig {
        n_classes: 0,
        ..tiny(5, 5)
    };
    let mut m = SmaeModel::new(cfg, 9).unwrap();
    jitter(&mut m, 9);
    let x = spectrum(5, 6);
    let plan = MaskPlan::all(1);
    let lat = m.encode(&x, &plan).unwrap();
    assert_eq!(lat.shape(), &[1, 8]);
    let got = m.decode(&lat, &plan).unwrap();
    // independent of the spectrum: nothing visible reaches the decoder
    let other = m.reconstruct(&spectrum(5, 7), &plan).unwrap();
    assert_eq!(got, other);
    let rows = vec![lat.row(0).to_vec()];
    assert_close(&got, &naive_decode(&m, &rows, &plan), 1e-12);
}

#[test]
fn decode_rejects_inconsistent_plan() {
    let m = SmaeModel::new(tiny(20, 5), 10).unwrap();
    let x = spectrum(20, 7);
    let lat = m.encode(&x, &MaskPlan::none(4)).unwrap();
    let plan = MaskPlan::from_indices(4, &[1]).unwrap();
    assert!(matches!(m.decode(&lat, &plan), Err(Error::Contract(_))));
    let ft = m.to_classifier(3, 1).unwrap();
    assert!(matches!(ft.decode(&lat, &MaskPlan::none(4)), Err(Error::Config(_))));
}

#[test]
fn zero_head_returns_bias() {
    let mut m = SmaeModel::new(tiny(20, 5), 11).unwrap();
    jitter(&mut m, 11);
    m.param_mut("cls_head.weight").unwrap().data_mut().fill(0.0);
    m.param_mut("cls_head.bias").unwrap().data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    for s in 0..3 {
        assert_eq!(m.classify(&spectrum(20, s)).unwrap(), vec![0.5, -1.0, 2.0]);
    }
}

#[test]
fn argmax_is_shift_invariant() {
    let mut m = SmaeModel::new(tiny(20, 5), 12).unwrap();
    jitter(&mut m, 12);
    let x = spectrum(20, 8);
    let before = m.predict(&x).unwrap();
    m.param_mut("cls_head.bias").unwrap().data_mut().iter_mut().for_each(|b| *b += 3.7);
    assert_eq!(m.predict(&x).unwrap(), before);
}

#[test]
fn head_copies_latent_coordinate() {
    let mut m = SmaeModel::new(tiny(20, 5), 13).unwrap();
    jitter(&mut m, 13);
    let k = 5;
    let w = m.param_mut("cls_head.weight").unwrap();
    w.data_mut().fill(0.0);
    w.data_mut()[k * 3 + 1] = 1.0;
    m.param_mut("cls_head.bias").unwrap().data_mut().fill(0.0);
    let x = spectrum(20, 9);
    let scores = m.classify(&x).unwrap();
    let cls = &naive_encode(&m, &x, &[0, 1, 2, 3])[0];
    assert!((scores[1] - cls[k]).abs() < 1e-12);
    assert_eq!(scores[0], 0.0);
}

#[test]
fn classify_without_head() {
    let m = SmaeModel::new(SmaeConfig { n_classes: 0, ..tiny(20, 5) }, 14).unwrap();
    assert!(matches!(m.classify(&spectrum(20, 1)), Err(Error::MissingHead)));
}

#[test]
fn forward_is_deterministic() {
    let m = SmaeModel::new(tiny(20, 5), 15).unwrap();
    let x = spectrum(20, 10);
    let plan = MaskPlan::from_indices(4, &[1, 2]).unwrap();
    let a = m.reconstruct(&x, &plan).unwrap();
    let b = m.reconstruct(&x, &plan).unwrap();
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn classifier_keeps_encoder_weights() {
    let mut m = SmaeModel::new(SmaeConfig { n_classes: 0, ..tiny(20, 5) }, 16).unwrap();
    jitter(&mut m, 16);
    let ft = m.to_classifier(4, 2).unwrap();
    assert!(ft.param("decoder.embed.weight").is_none());
    assert_eq!(ft.param("encoder.1.mlp.fc2.weight"), m.param("encoder.1.mlp.fc2.weight"));
    assert_eq!(ft.config().n_classes, 4);
    let x = spectrum(20, 11);
    assert_eq!(ft.encode(&x, &MaskPlan::none(4)).unwrap(), m.encode(&x, &MaskPlan::none(4)).unwrap());
}

// ---- checkpoints ----

#[test]
fn checkpoint_round_trip() {
    let mut m = SmaeModel::new(tiny(20, 5), 17).unwrap();
    jitter(&mut m, 17);
    let ck = Checkpoint {
        model: m.clone(),
        metadata: serde_json::json!({"epochs": 3}),
    };
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(back.model.config(), m.config());
    assert_eq!(back.model.names(), m.names());
    assert_eq!(back.metadata, ck.metadata);
    for (a, b) in m.params().iter().zip(back.model.params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= x.abs() * 2f64.powi(-23), "{x} vs {y}");
        }
    }
    // a second trip is lossless
    let again = Checkpoint::from_bytes(&back.to_bytes().unwrap()).unwrap();
    assert_eq!(again.model, back.model);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.smae");
    let ck = Checkpoint::new(SmaeModel::new(tiny(20, 5), 18).unwrap());
    save_checkpoint(&ck, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SMAE");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 16 + header_len + 4 * ck.model.parameter_count());
    assert_eq!(load_checkpoint(&path).unwrap().model.config(), ck.model.config());
    assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_errors() {
    let ck = Checkpoint::new(SmaeModel::new(tiny(20, 5), 19).unwrap());
    let bytes = ck.to_bytes().unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::PayloadLength { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnsupportedVersion(7))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..12]), Err(Error::Header(_))));
}

#[test]
fn checkpoint_header_order_is_free() {
    let mut m = SmaeModel::new(tiny(20, 5), 20).unwrap();
    jitter(&mut m, 20);
    // write the parameters in reverse order by hand
    let entries: Vec<checkpoint::ParamEntry> = m
        .names()
        .iter()
        .zip(m.params())
        .rev()
        .map(|(n, t)| checkpoint::ParamEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = serde_json::to_vec(&checkpoint::Header {
        config: m.config().clone(),
        params: entries,
        metadata: serde_json::Value::Null,
    })
    .unwrap();
    let mut bytes = b"SMAE".to_vec();
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in m.params().iter().rev() {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let back = Checkpoint::from_bytes(&bytes).unwrap().model;
    for (name, t) in m.names().iter().zip(m.params()) {
        let got = back.param(name).unwrap();
        let want: Vec<f64> = t.data().iter().map(|&v| f64::from(v as f32)).collect();
        assert_eq!(got.data(), want.as_slice(), "{name}");
    }
}
