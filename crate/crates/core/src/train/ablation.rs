use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, finetune_with_validation, pretrain_with_validation, FinetuneInit, TrainConfig};
use crate::error::{Error, Result};
use crate::model::SmaeConfig;
use crate::spectra_io::SpectraDataset;

/// Hyperparameter varied by a sweep, with the values to try.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum AblationAxis {
    MaskRatio(Vec<f64>),
    PatchSize(Vec<usize>),
    EncDepth(Vec<usize>),
    DecDepth(Vec<usize>),
    /// Pretraining epochs; fine-tuning keeps its own count.
    Epochs(Vec<usize>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::MaskRatio(_) => "mask_ratio",
            AblationAxis::PatchSize(_) => "patch_size",
            AblationAxis::EncDepth(_) => "enc_depth",
            AblationAxis::DecDepth(_) => "dec_depth",
            AblationAxis::Epochs(_) => "epochs",
        }
    }

    /// Parses `name` and a comma-separated value list.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        fn list<T: std::str::FromStr>(values: &str) -> Result<Vec<T>> {
            values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad sweep value {v:?}")))
                })
                .collect()
        }
        Ok(match name {
            "mask_ratio" => AblationAxis::MaskRatio(list(values)?),
            "patch_size" => AblationAxis::PatchSize(list(values)?),
            "enc_depth" => AblationAxis::EncDepth(list(values)?),
            "dec_depth" => AblationAxis::DecDepth(list(values)?),
            "epochs" => AblationAxis::Epochs(list(values)?),
            other => return Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        })
    }

    fn arms(&self, smae: &SmaeConfig, pretrain: &TrainConfig) -> Vec<(String, SmaeConfig, TrainConfig)> {
        let mut out = Vec::new();
        match self {
            AblationAxis::MaskRatio(vs) => {
                for &v in vs {
                    out.push((v.to_string(), smae.clone(), TrainConfig { mask_ratio: v, ..pretrain.clone() }));
                }
            }
            AblationAxis::PatchSize(vs) => {
                for &v in vs {
                    out.push((v.to_string(), SmaeConfig { patch_size: v, ..smae.clone() }, pretrain.clone()));
                }
            }
            AblationAxis::EncDepth(vs) => {
                for &v in vs {
                    out.push((v.to_string(), SmaeConfig { encoder_depth: v, ..smae.clone() }, pretrain.clone()));
                }
            }
            AblationAxis::DecDepth(vs) => {
                for &v in vs {
                    out.push((v.to_string(), SmaeConfig { decoder_depth: v, ..smae.clone() }, pretrain.clone()));
                }
            }
            AblationAxis::Epochs(vs) => {
                for &v in vs {
                    out.push((v.to_string(), smae.clone(), TrainConfig { epochs: v, ..pretrain.clone() }));
                }
            }
        }
        out
    }
}

/// Data for one sweep: unlabeled pretraining spectra, a labeled fine-tuning
/// set and a labeled test set.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub pretrain: &'a SpectraDataset,
    pub finetune: &'a SpectraDataset,
    pub test: &'a SpectraDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub pretrain_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedArm {
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub skipped: Vec<SkippedArm>,
}

impl AblationTable {
    pub fn accuracy_of(&self, value: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.value == value).map(|r| r.accuracy)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["axis", "value", "pretrain_loss", "accuracy"])?;
        for r in &self.rows {
            w.write_record([
                r.axis.clone(),
                r.value.clone(),
                r.pretrain_loss.to_string(),
                r.accuracy.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        std::fs::write(c, self.to_csv()?).map_err(|e| Error::io(c, e))?;
        std::fs::write(j, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(j, e))
    }
}

/// Pretrains and fine-tunes once per axis value with a shared seed and
/// reports test accuracy. Values that produce an invalid configuration are
/// listed under `skipped` with the reason.
pub fn ablation_sweep(
    axis: &AblationAxis,
    smae: &SmaeConfig,
    pretrain: &TrainConfig,
    finetune: &TrainConfig,
    data: AblationData<'_>,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    let empty = SpectraDataset::default();
    for (value, arm_smae, arm_pretrain) in axis.arms(smae, pretrain) {
        let check = arm_smae
            .validate()
            .and_then(|_| arm_pretrain.validate())
            .and_then(|_| {
                if arm_smae.has_decoder() {
                    Ok(())
                } else {
                    Err(Error::Config("pretraining needs decoder_depth >= 1".into()))
                }
            });
        if let Err(e) = check {
            table.skipped.push(SkippedArm {
                value,
                reason: e.to_string(),
            });
            continue;
        }
        let pre = pretrain_with_validation(data.pretrain, &empty, &arm_smae, &arm_pretrain)?;
        let tuned = finetune_with_validation(FinetuneInit::Pretrained(&pre.model), data.finetune, &empty, finetune)?;
        table.rows.push(AblationRow {
            axis: axis.name().to_string(),
            value,
            pretrain_loss: pre.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN),
            accuracy: accuracy(&tuned.model, data.test)?,
        });
    }
    Ok(table)
}
