use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::commands::{load_data, prepare_out_dir, required, Finished, NamedMap};
use super::{resolve, CliResult, Common, CommonArgs, Outcome};
use crate::error::{Error, Result};
use crate::svg::{self, Series};
use crate::train::TrainLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// Noisy input, reconstruction and clean reference of one spectrum.
    Triptych,
    /// Loss and accuracy per epoch from a training log.
    Curves,
    /// Two-component PCA of clustered spectra or embeddings.
    Scatter,
    /// Test accuracy per arm of an ablation sweep.
    Ablation,
    /// Grad-CAM relevance strips under their spectra.
    Gradcam,
}

impl PlotKind {
    fn name(self) -> &'static str {
        match self {
            PlotKind::Triptych => "triptych",
            PlotKind::Curves => "curves",
            PlotKind::Scatter => "scatter",
            PlotKind::Ablation => "ablation",
            PlotKind::Gradcam => "gradcam",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Figure type [default: curves]
    #[arg(long, value_enum)]
    kind: Option<PlotKind>,
    /// Source file: noisy CSV (triptych), log JSONL (curves), cluster_pca.csv
    /// (scatter), ablation CSV (ablation) or gradcam.json (gradcam)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Reconstruction CSV for the triptych
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Row shown in the triptych [default: 0]
    #[arg(long)]
    index: Option<usize>,
    /// Output SVG, relative to --out-dir [default: <kind>.svg]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PlotSettings {
    #[serde(flatten)]
    common: Common,
    kind: PlotKind,
    input: Option<PathBuf>,
    recon: Option<PathBuf>,
    index: usize,
    out: Option<PathBuf>,
}

impl Default for PlotSettings {
    fn default() -> Self {
        PlotSettings {
            common: Common::default(),
            kind: PlotKind::Curves,
            input: None,
            recon: None,
            index: 0,
            out: None,
        }
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("{}: no {name:?} column", path.display())))
}

fn number(cell: &str, path: &Path) -> Result<f64> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{}: cannot parse {cell:?} as a number", path.display())))
}

fn triptych(input: &Path, recon: &Path, index: usize) -> Result<String> {
    let noisy = load_data(input)?;
    let recon = load_data(recon)?;
    let (Some(a), Some(b)) = (noisy.spectra.get(index), recon.spectra.get(index)) else {
        return Err(Error::Config(format!("row {index} missing from the inputs")));
    };
    let mut panels = vec![
        Series::indexed("noisy input", &a.intensities),
        Series::indexed("reconstruction", &b.intensities),
    ];
    if let Some(r) = a.reference.as_ref().or(b.reference.as_ref()) {
        panels.push(Series::indexed("clean reference", r));
    }
    Ok(svg::stacked_lines(&format!("spectrum {index}"), "position", &panels))
}

fn curves(input: &Path) -> Result<String> {
    let records = TrainLog::read_jsonl(input)?;
    let pick = |f: &dyn Fn(&crate::train::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        records.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    let mut panels = vec![Series::new("train loss", pick(&|r| Some(r.train_loss)))];
    for (name, points) in [
        ("validation loss", pick(&|r| r.val_loss)),
        ("validation accuracy", pick(&|r| r.val_accuracy)),
    ] {
        if !points.is_empty() {
            panels.push(Series::new(name, points));
        }
    }
    Ok(svg::stacked_lines("training curves", "epoch", &panels))
}

fn scatter(input: &Path) -> Result<String> {
    let (header, rows) = read_table(input)?;
    let (x, y) = (column(&header, "pc1", input)?, column(&header, "pc2", input)?);
    let cluster = column(&header, "cluster", input)?;
    let label = header.iter().position(|h| h == "label");
    let labeled = label.is_some_and(|l| rows.iter().all(|r| !r[l].trim().is_empty()));
    let by = if labeled { label.unwrap_or(cluster) } else { cluster };
    let mut points = Vec::with_capacity(rows.len());
    let mut groups = 0;
    for r in &rows {
        let g = number(&r[by], input)? as usize;
        groups = groups.max(g + 1);
        points.push((number(&r[x], input)?, number(&r[y], input)?, g));
    }
    let prefix = if labeled { "class" } else { "cluster" };
    let names: Vec<String> = (0..groups).map(|g| format!("{prefix} {g}")).collect();
    Ok(svg::scatter("embedding PCA", "PC1", "PC2", &points, &names))
}

fn ablation(input: &Path) -> Result<String> {
    let (header, rows) = read_table(input)?;
    let (axis, value, acc) = (
        column(&header, "axis", input)?,
        column(&header, "value", input)?,
        column(&header, "accuracy", input)?,
    );
    let bars = rows
        .iter()
        .map(|r| Ok((r[value].clone(), number(&r[acc], input)?)))
        .collect::<Result<Vec<_>>>()?;
    let name = rows.first().map_or("value", |r| r[axis].as_str());
    Ok(svg::bar_chart("ablation", name, "test accuracy", &bars))
}

fn gradcam(input: &Path) -> Result<String> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let maps: Vec<NamedMap> = serde_json::from_str(&text)?;
    let rows: Vec<(String, Vec<f64>, Vec<f64>)> =
        maps.into_iter().map(|m| (m.name, m.spectrum, m.relevance)).collect();
    Ok(svg::heat_strips("Grad-CAM relevance", &rows))
}

pub(crate) fn plot(args: PlotArgs) -> CliResult<Finished> {
    let s: PlotSettings = resolve(args.common.config.as_deref(), &args)?;
    let input = required(&s.input, "input")?;
    let figure = match s.kind {
        PlotKind::Triptych => triptych(input, required(&s.recon, "recon")?, s.index)?,
        PlotKind::Curves => curves(input)?,
        PlotKind::Scatter => scatter(input)?,
        PlotKind::Ablation => ablation(input)?,
        PlotKind::Gradcam => gradcam(input)?,
    };
    prepare_out_dir(&s.common)?;
    let out = s
        .common
        .output(&s.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.svg", s.kind.name()))));
    std::fs::write(&out, figure).map_err(|e| Error::io(&out, e))?;
    let mut outcome = Outcome {
        manifest: Some(format!("plot-{}", s.kind.name())),
        ..Outcome::default()
    };
    outcome.artifact("figure", &out);
    Ok((s.common.clone(), serde_json::to_value(&s).map_err(Error::from)?, outcome))
}
