use super::*;
use crate::patch_mask::MaskPlan;
use crate::spectra_io::{generate_synthetic, Spectrum, SynthConfig};
use crate::tensor::grad_check_per_param;

fn tiny_config() -> SmaeConfig {
    SmaeConfig {
        length: 20,
        patch_size: 5,
        embed_dim: 8,
        heads: 2,
        encoder_depth: 2,
        decoder_depth: 1,
        decoder_dim: 8,
        mlp_ratio: 2,
        n_classes: 0,
    }
}

fn tiny_data(n_classes: usize, per_class: usize, seed: u64) -> SpectraDataset {
    generate_synthetic(&SynthConfig {
        n_classes,
        spectra_per_class: per_class,
        length: 20,
        peaks_per_class: 2,
        width_min: 1.0,
        width_max: 2.0,
        noise_sigma: 0.02,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .normalized()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 11,
        validation_fraction: 0.25,
        ..TrainConfig::default()
    }
}

#[test]
fn masked_mse_hand_example() {
    let plan = MaskPlan::from_indices(2, &[1]).unwrap();
    let loss = masked_mse_loss(&[9.0, 9.0, 1.0, 1.0], &[0.0; 4], &plan, 2).unwrap();
    assert_eq!(loss, 1.0);
}

#[test]
fn masked_mse_ignores_visible_targets() {
    let plan = MaskPlan::from_indices(3, &[0, 2]).unwrap();
    let recon = [0.3, -1.2, 0.7, 2.0, 0.1, 0.9];
    let target = [0.5, 0.25, -3.0, 1.0, 0.0, 0.4];
    let mut moved = target;
    moved[2] = 123.0;
    moved[3] = -7.5;
    let a = masked_mse_loss(&recon, &target, &plan, 2).unwrap();
    let b = masked_mse_loss(&recon, &moved, &plan, 2).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn masked_mse_empty_plan_and_identity() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(masked_mse_loss(&x, &[0.0; 4], &MaskPlan::none(2), 2).unwrap(), 0.0);
    assert_eq!(masked_mse_loss(&x, &x, &MaskPlan::all(2), 2).unwrap(), 0.0);
    assert!(masked_mse_loss(&x, &x[..3], &MaskPlan::all(2), 2).is_err());
}

#[test]
fn cross_entropy_values() {
    let uniform = cross_entropy_loss(&[0.3; 5], 2).unwrap();
    assert!((uniform - 5f64.ln()).abs() < 1e-12);
    // ln(1 + e^-20)
    let tiny = cross_entropy_loss(&[10.0, -10.0], 0).unwrap();
    assert!((tiny - 2.061_153_620_314_380_7e-9).abs() < 1e-22);
    let a = cross_entropy_loss(&[0.1, 1.7, -0.4], 1).unwrap();
    let b = cross_entropy_loss(&[100.1, 101.7, 99.6], 1).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!(matches!(cross_entropy_loss(&[0.0, 1.0], 2), Err(Error::Contract(_))));
}

#[test]
fn warmup_schedule() {
    assert_eq!(scheduled_lr(1.0, 0, 4), 0.25);
    assert_eq!(scheduled_lr(1.0, 3, 4), 1.0);
    assert_eq!(scheduled_lr(1.0, 40, 4), 1.0);
    assert_eq!(scheduled_lr(0.5, 0, 0), 0.5);
    let cfg = TrainConfig { epochs: 500, ..TrainConfig::default() };
    assert_eq!(cfg.warmup(), 25);
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    assert_eq!(cfg.warmup(), 1);
}

#[test]
fn config_validation() {
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { mask_ratio: 1.5, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn pretraining_loss_gradient_matches_finite_differences() {
    let model = SmaeModel::new(tiny_config(), 5).unwrap();
    let data = tiny_data(2, 1, 3);
    let n = model.config().n_patches();
    let plans = [
        MaskPlan::from_indices(n, &[0, 3]).unwrap(),
        MaskPlan::from_indices(n, &[1, 2]).unwrap(),
    ];
    let f = |tape: &mut Tape, vars: &[crate::tensor::Var]| {
        let mut losses = Vec::new();
        for (s, plan) in data.spectra.iter().zip(&plans) {
            let trace = model.encode_on(tape, vars, &s.intensities, plan)?;
            let recon = model.decode_on(tape, vars, trace.latents, plan)?;
            losses.push(tape.masked_mse(recon, &s.intensities, &plan.masked_positions(5))?);
        }
        let total = tape.add(losses[0], losses[1])?;
        Ok(tape.scale(total, 0.5))
    };
    let errors = grad_check_per_param(&f, model.params(), 1e-3).unwrap();
    for (name, e) in model.names().iter().zip(&errors) {
        assert!(*e < 1e-4, "{name}: {e}");
    }
}

#[test]
fn pretraining_gradients_vanish_at_visible_positions() {
    let model = SmaeModel::new(tiny_config(), 1).unwrap();
    let s = &tiny_data(1, 1, 2).spectra[0].intensities;
    let plan = MaskPlan::from_indices(4, &[1, 3]).unwrap();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let trace = model.encode_on(&mut tape, &vars, s, &plan).unwrap();
    let recon = model.decode_on(&mut tape, &vars, trace.latents, &plan).unwrap();
    let loss = tape.masked_mse(recon, s, &plan.masked_positions(5)).unwrap();
    let g = tape.backward(loss).unwrap().wrt(recon);
    for (i, v) in g.data().iter().enumerate() {
        if plan.is_masked(i / 5) {
            assert_ne!(*v, 0.0);
        } else {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn pretraining_reduces_loss() {
    let data = tiny_data(3, 12, 4);
    let out = pretrain(&data, &tiny_config(), &quick(30)).unwrap();
    let first = out.log.records[0].train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert_eq!(out.log.records.len(), 30);
    assert!(out.log.best_epoch >= 1 && out.log.best_epoch <= 30);
}

#[test]
fn pretraining_is_deterministic_and_thread_independent() {
    let data = tiny_data(2, 6, 9);
    let a = pretrain(&data, &tiny_config(), &quick(3)).unwrap();
    let b = pretrain(&data, &tiny_config(), &quick(3)).unwrap();
    let c = pretrain(&data, &tiny_config(), &TrainConfig { threads: 3, ..quick(3) }).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.to_jsonl().unwrap(), c.log.to_jsonl().unwrap());
    for ((x, y), z) in a.model.params().iter().zip(b.model.params()).zip(c.model.params()) {
        assert_eq!(x, y);
        assert_eq!(x, z);
    }
}

#[test]
fn zero_mask_ratio_is_degenerate() {
    let data = tiny_data(2, 4, 1);
    let out = pretrain(&data, &tiny_config(), &TrainConfig { mask_ratio: 0.0, ..quick(2) }).unwrap();
    assert!(out.log.records.iter().all(|r| r.train_loss == 0.0 && r.val_loss == Some(0.0)));
    assert_eq!(out.log.notes.len(), 1);
    assert_eq!(out.log.best_epoch, 1);
}

#[test]
fn pretraining_rejects_bad_inputs() {
    let data = tiny_data(2, 4, 1);
    let wrong_length = SmaeConfig { length: 40, ..tiny_config() };
    assert!(matches!(pretrain(&data, &wrong_length, &quick(1)), Err(Error::Config(_))));
    let no_decoder = SmaeConfig { decoder_depth: 0, ..tiny_config() };
    assert!(matches!(pretrain(&data, &no_decoder, &quick(1)), Err(Error::Config(_))));
    let bad_patch = SmaeConfig { patch_size: 3, ..tiny_config() };
    assert!(matches!(pretrain(&data, &bad_patch, &quick(1)), Err(Error::Divisibility { .. })));
}

#[test]
fn single_class_finetune_is_perfect() {
    let data = tiny_data(1, 6, 2);
    let out = finetune(FinetuneInit::Scratch(&tiny_config()), &data, &quick(1)).unwrap();
    assert_eq!(out.log.records[0].val_accuracy, Some(1.0));
    assert_eq!(accuracy(&out.model, &data).unwrap(), 1.0);
}

#[test]
fn finetune_learns_and_is_deterministic() {
    let data = tiny_data(3, 8, 6);
    let pre = pretrain(&data, &tiny_config(), &quick(2)).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-2, ..quick(30) };
    let run = || finetune(FinetuneInit::Pretrained(&pre.model), &data, &cfg).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.log, b.log);
    assert!(a.model.config().n_classes == 3 && !a.model.config().has_decoder());
    assert!(a.log.records.iter().all(|r| r.val_accuracy.is_some()));
    let acc = accuracy(&a.model, &data).unwrap();
    assert!(acc > 0.9, "{acc} {:?}", a.log.records.iter().map(|r| (r.train_loss, r.val_accuracy)).collect::<Vec<_>>());
}

#[test]
fn head_only_finetune_freezes_encoder() {
    let data = tiny_data(2, 4, 6);
    let pre = pretrain(&data, &tiny_config(), &quick(1)).unwrap();
    let cfg = TrainConfig { head_only: true, ..quick(2) };
    let out = finetune(FinetuneInit::Pretrained(&pre.model), &data, &cfg).unwrap();
    for (name, p) in out.model.names().iter().zip(out.model.params()) {
        if name.starts_with("cls_head") {
            continue;
        }
        assert_eq!(Some(p), pre.model.param(name), "{name}");
    }
}

#[test]
fn finetune_needs_labels_and_matching_length() {
    let unlabeled = SpectraDataset::new(vec![Spectrum::new(vec![0.0; 20]); 3]).unwrap();
    assert!(finetune(FinetuneInit::Scratch(&tiny_config()), &unlabeled, &quick(1)).is_err());
    let data = tiny_data(2, 3, 1);
    let other = SmaeModel::new(SmaeConfig { length: 40, ..tiny_config() }, 0).unwrap();
    let err = finetune(FinetuneInit::Pretrained(&other), &data, &quick(1)).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("40")), "{err}");
}

#[test]
fn train_log_jsonl_round_trip() {
    let data = tiny_data(2, 3, 1);
    let out = pretrain(&data, &tiny_config(), &quick(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    out.log.write_jsonl(&path).unwrap();
    assert_eq!(TrainLog::read_jsonl(&path).unwrap(), out.log.records);
    assert_eq!(out.log.to_jsonl().unwrap().lines().count(), 2);
}

#[test]
fn denoise_covers_every_patch_once_per_round() {
    let model = SmaeModel::new(tiny_config(), 2).unwrap();
    let s = &tiny_data(1, 1, 2).spectra[0].intensities;
    let out = model.denoise(s, 0.5, 1, 4).unwrap();
    let mut order: Vec<usize> = (0..4).collect();
    crate::spectra_io::shuffle(&mut order, &mut rng::rng_for(4, &[tag::RECONSTRUCT, 0]));
    let mut expected = vec![0.0; 20];
    for group in order.chunks(2) {
        let recon = model.reconstruct(s, &MaskPlan::from_indices(4, group).unwrap()).unwrap();
        for &p in group {
            expected[p * 5..(p + 1) * 5].copy_from_slice(&recon[p * 5..(p + 1) * 5]);
        }
    }
    assert_eq!(out, expected);
    assert_eq!(model.denoise(s, 0.0, 3, 4).unwrap(), model.reconstruct(s, &MaskPlan::none(4)).unwrap());
}

#[test]
fn ablation_skips_invalid_values() {
    let data = tiny_data(2, 4, 3);
    let axis = AblationAxis::PatchSize(vec![5, 3, 10]);
    let table = ablation_sweep(
        &axis,
        &tiny_config(),
        &quick(1),
        &quick(1),
        AblationData {
            pretrain: &data,
            finetune: &data,
            test: &data,
        },
    )
    .unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.skipped.len(), 1);
    assert_eq!(table.skipped[0].value, "3");
    assert!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    let csv = table.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("axis,value,pretrain_loss,accuracy"));
}

#[test]
fn ablation_axis_parsing() {
    assert_eq!(
        AblationAxis::parse("mask_ratio", "0,0.5, 0.9").unwrap(),
        AblationAxis::MaskRatio(vec![0.0, 0.5, 0.9])
    );
    assert_eq!(AblationAxis::parse("dec_depth", "0,1").unwrap(), AblationAxis::DecDepth(vec![0, 1]));
    assert!(AblationAxis::parse("width", "1").is_err());
    assert!(AblationAxis::parse("epochs", "x").is_err());
}
