//! Spectral datasets: CSV interchange, min-max normalization and a seeded
//! synthetic generator built from Gaussian peak mixtures.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// One measured spectrum, optionally labeled and optionally paired with a
/// high-SNR reference of the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub intensities: Vec<f64>,
    pub label: Option<usize>,
    pub reference: Option<Vec<f64>>,
}

impl Spectrum {
    pub fn new(intensities: Vec<f64>) -> Self {
        Spectrum {
            intensities,
            label: None,
            reference: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.intensities.is_empty() {
            return Err(Error::Contract("spectrum has no intensities".into()));
        }
        if let Some(i) = self.intensities.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("intensity {i} is not finite")));
        }
        if let Some(r) = &self.reference {
            if r.len() != self.intensities.len() {
                return Err(Error::shape(
                    "spectrum reference",
                    &[self.intensities.len()],
                    &[r.len()],
                ));
            }
        }
        Ok(())
    }
}

/// Maps each class id to a coarser group id (e.g. isolates to treatments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub class_to_group: BTreeMap<usize, usize>,
    pub group_names: Vec<String>,
}

impl Grouping {
    pub fn group_of(&self, class: usize) -> Result<usize> {
        self.class_to_group
            .get(&class)
            .copied()
            .ok_or(Error::MissingGroup(class))
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectraDataset {
    pub spectra: Vec<Spectrum>,
    pub class_names: Option<Vec<String>>,
    pub grouping: Option<Grouping>,
}

impl SpectraDataset {
    pub fn new(spectra: Vec<Spectrum>) -> Result<Self> {
        let ds = SpectraDataset {
            spectra,
            class_names: None,
            grouping: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let length = self.length();
        for s in &self.spectra {
            s.validate()?;
            if s.len() != length {
                return Err(Error::shape("dataset member", &[length], &[s.len()]));
            }
        }
        if let Some(names) = &self.class_names {
            if let Some(bad) = self.spectra.iter().filter_map(|s| s.label).find(|&l| l >= names.len()) {
                return Err(Error::Contract(format!(
                    "label {bad} exceeds {} class names",
                    names.len()
                )));
            }
        }
        if let Some(g) = &self.grouping {
            for l in self.spectra.iter().filter_map(|s| s.label) {
                g.group_of(l)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    /// Shared spectrum length, 0 for an empty dataset.
    pub fn length(&self) -> usize {
        self.spectra.first().map_or(0, Spectrum::len)
    }

    pub fn is_labeled(&self) -> bool {
        !self.spectra.is_empty() && self.spectra.iter().all(|s| s.label.is_some())
    }

    /// Labels of every spectrum; errors if any spectrum is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.spectra
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.label
                    .ok_or_else(|| Error::Contract(format!("spectrum {i} has no label")))
            })
            .collect()
    }

    /// Number of classes: the class-name count when known, else max label + 1.
    pub fn n_classes(&self) -> usize {
        match &self.class_names {
            Some(names) => names.len(),
            None => self
                .spectra
                .iter()
                .filter_map(|s| s.label)
                .max()
                .map_or(0, |m| m + 1),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> SpectraDataset {
        SpectraDataset {
            spectra: indices.iter().map(|&i| self.spectra[i].clone()).collect(),
            class_names: self.class_names.clone(),
            grouping: self.grouping.clone(),
        }
    }

    /// Seeded random split; the second part holds `round(fraction * n)` spectra.
    pub fn split(&self, fraction: f64, seed: u64) -> (SpectraDataset, SpectraDataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        shuffle(&mut order, &mut rng::rng_for(seed, &[tag::SPLIT]));
        let n_second = ((fraction * self.len() as f64).round() as usize).min(self.len());
        let (second, first) = order.split_at(n_second);
        let mut first = first.to_vec();
        let mut second = second.to_vec();
        first.sort_unstable();
        second.sort_unstable();
        (self.subset(&first), self.subset(&second))
    }

    /// First `k` spectra of every class, in dataset order.
    pub fn take_per_class(&self, k: usize) -> SpectraDataset {
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        let idx: Vec<usize> = self
            .spectra
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.label.is_some_and(|l| {
                    let c = seen.entry(l).or_insert(0);
                    *c += 1;
                    *c <= k
                })
            })
            .map(|(i, _)| i)
            .collect();
        self.subset(&idx)
    }

    /// Copy with every spectrum min-max normalized (references untouched).
    pub fn normalized(&self) -> SpectraDataset {
        let mut out = self.clone();
        for s in &mut out.spectra {
            s.intensities = normalize_minmax(&s.intensities);
        }
        out
    }
}

/// Fisher-Yates shuffle driven by the crate RNG.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut rng::Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Affine map of a spectrum onto [0, 1], kept so it can be undone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub range: f64,
}

impl MinMax {
    pub fn fit(x: &[f64]) -> MinMax {
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MinMax {
            min,
            range: max - min,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.range > 0.0 {
            x.iter().map(|v| (v - self.min) / self.range).collect()
        } else {
            vec![0.0; x.len()]
        }
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.range + self.min).collect()
    }
}

/// Per-spectrum min-max normalization; constant spectra map to zeros.
pub fn normalize_minmax(x: &[f64]) -> Vec<f64> {
    MinMax::fit(x).apply(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub spectra_per_class: usize,
    pub length: usize,
    pub peaks_per_class: usize,
    pub width_min: f64,
    pub width_max: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub noise_sigma: f64,
    /// Each spectrum is its class template displaced by a uniform whole
    /// number of points in `[-max_shift, max_shift]`, edges held constant.
    #[serde(default)]
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 3,
            spectra_per_class: 200,
            length: 200,
            peaks_per_class: 5,
            width_min: 2.0,
            width_max: 6.0,
            amplitude_min: 0.3,
            amplitude_max: 1.0,
            noise_sigma: 0.05,
            max_shift: 0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.spectra_per_class == 0 || self.length == 0 || self.peaks_per_class == 0 {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max) {
            return Err(Error::Config("peak widths must satisfy 0 < min <= max".into()));
        }
        if !(self.amplitude_min <= self.amplitude_max) {
            return Err(Error::Config("peak amplitudes must satisfy min <= max".into()));
        }
        if self.max_shift >= self.length {
            return Err(Error::Config(format!(
                "shift of {} points on spectra of {} points",
                self.max_shift, self.length
            )));
        }
        Ok(())
    }
}

/// Noiseless class templates: one Gaussian-peak mixture per class.
pub fn synthetic_templates(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::rng_for(config.seed, &[tag::SYNTH, 0]);
    let l = config.length;
    (0..config.n_classes)
        .map(|_| {
            let mut template = vec![0.0; l];
            for _ in 0..config.peaks_per_class {
                let center = rng.random_range(0.0..l as f64);
                let width = if config.width_max > config.width_min {
                    rng.random_range(config.width_min..config.width_max)
                } else {
                    config.width_min
                };
                let amp = if config.amplitude_max > config.amplitude_min {
                    rng.random_range(config.amplitude_min..config.amplitude_max)
                } else {
                    config.amplitude_min
                };
                for (x, t) in template.iter_mut().enumerate() {
                    let z = (x as f64 - center) / width;
                    *t += amp * (-0.5 * z * z).exp();
                }
            }
            template
        })
        .collect()
}

/// `x` displaced right by `by` points (left when negative); vacated points
/// repeat the nearest edge value.
pub fn shift_spectrum(x: &[f64], by: i64) -> Vec<f64> {
    let last = x.len() as i64 - 1;
    (0..=last).map(|i| x[(i - by).clamp(0, last) as usize]).collect()
}

/// Class-major synthetic dataset; each spectrum carries its noiseless
/// (shifted) template as the reference.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SpectraDataset> {
    config.validate()?;
    let templates = synthetic_templates(config);
    let mut rng = rng::rng_for(config.seed, &[tag::SYNTH, 1]);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut shifts = rng::rng_for(config.seed, &[tag::SYNTH, 2]);
    let m = config.max_shift as i64;
    let mut spectra = Vec::with_capacity(config.n_classes * config.spectra_per_class);
    for (class, base) in templates.iter().enumerate() {
        for _ in 0..config.spectra_per_class {
            let template = if m > 0 {
                shift_spectrum(base, shifts.random_range(-m..=m))
            } else {
                base.clone()
            };
            let intensities = template
                .iter()
                .map(|t| {
                    if config.noise_sigma > 0.0 {
                        t + noise.sample(&mut rng)
                    } else {
                        *t
                    }
                })
                .collect();
            spectra.push(
                Spectrum::new(intensities)
                    .with_label(class)
                    .with_reference(template),
            );
        }
    }
    Ok(SpectraDataset {
        spectra,
        class_names: Some((0..config.n_classes).map(|c| format!("class{c}")).collect()),
        grouping: None,
    })
}

fn parse_cell(path: &Path, row: usize, column: usize, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row,
            column,
            cell: cell.to_string(),
        })
}

/// Reads a dataset from CSV. Rows are numbered from 1 with the header as row 1.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool, has_reference: bool) -> Result<SpectraDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let expected = header.len();
    let label_cols = usize::from(has_labels);
    if expected <= label_cols {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let value_cols = expected - label_cols;
    if has_reference && value_cols % 2 != 0 {
        return Err(Error::Config(format!(
            "{}: reference block requires an even number of value columns, found {value_cols}",
            path.display()
        )));
    }
    let length = if has_reference { value_cols / 2 } else { value_cols };

    let mut spectra = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected,
                found: record.len(),
            });
        }
        let label = if has_labels {
            let cell = record[0].trim();
            if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<usize>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: 1,
                    cell: cell.to_string(),
                })?)
            }
        } else {
            None
        };
        let values = (label_cols..expected)
            .map(|c| parse_cell(path, row, c + 1, &record[c]))
            .collect::<Result<Vec<f64>>>()?;
        let (intensities, reference) = if has_reference {
            let (a, b) = values.split_at(length);
            (a.to_vec(), Some(b.to_vec()))
        } else {
            (values, None)
        };
        spectra.push(Spectrum {
            intensities,
            label,
            reference,
        });
    }
    if spectra.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    SpectraDataset::new(spectra)
}

/// Writes a dataset as CSV. The label column is emitted when any spectrum is
/// labeled; the reference block when every spectrum carries one.
pub fn save_csv(dataset: &SpectraDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let with_labels = dataset.spectra.iter().any(|s| s.label.is_some());
    let with_reference = !dataset.is_empty() && dataset.spectra.iter().all(|s| s.reference.is_some());
    let l = dataset.length();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);

    let mut header = Vec::new();
    if with_labels {
        header.push("label".to_string());
    }
    header.extend((1..=l).map(|i| format!("w{i}")));
    if with_reference {
        header.extend((1..=l).map(|i| format!("r{i}")));
    }
    w.write_record(&header)?;

    for s in &dataset.spectra {
        let mut row = Vec::with_capacity(header.len());
        if with_labels {
            row.push(s.label.map(|v| v.to_string()).unwrap_or_default());
        }
        row.extend(s.intensities.iter().map(|v| v.to_string()));
        if with_reference {
            row.extend(s.reference.iter().flatten().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a grouping file (JSON object: class name to group name). Class names
/// come from the dataset, or default to the decimal label when absent.
pub fn load_grouping(path: impl AsRef<Path>, dataset: &SpectraDataset) -> Result<Grouping> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
    let n_classes = dataset.n_classes();
    let names: Vec<String> = match &dataset.class_names {
        Some(n) => n.clone(),
        None => (0..n_classes).map(|c| c.to_string()).collect(),
    };
    let mut group_names: Vec<String> = Vec::new();
    let mut class_to_group = BTreeMap::new();
    for (class, name) in names.iter().enumerate() {
        let Some(group) = map.get(name) else {
            continue;
        };
        let gid = match group_names.iter().position(|g| g == group) {
            Some(g) => g,
            None => {
                group_names.push(group.clone());
                group_names.len() - 1
            }
        };
        class_to_group.insert(class, gid);
    }
    let grouping = Grouping {
        class_to_group,
        group_names,
    };
    for l in dataset.spectra.iter().filter_map(|s| s.label) {
        grouping.group_of(l)?;
    }
    Ok(grouping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_labeled_csv() {
        let f = write_tmp("label,w1,w2\n0,1.0,2.0\n1,0.5,0.5\n0,2.0,1.0\n");
        let ds = load_csv(f.path(), true, false).unwrap();
        assert_eq!(ds.length(), 2);
        assert_eq!(ds.labels().unwrap(), vec![0, 1, 0]);
        assert_eq!(ds.spectra[2].intensities, vec![2.0, 1.0]);
    }

    #[test]
    fn loads_unlabeled_csv() {
        let f = write_tmp("w1,w2\n1.0,2.0\n0.5,0.5\n");
        let ds = load_csv(f.path(), false, false).unwrap();
        assert!(ds.spectra.iter().all(|s| s.label.is_none()));
        assert_eq!(ds.length(), 2);
    }

    #[test]
    fn empty_label_cell_is_unlabeled() {
        let f = write_tmp("label,w1\n,1.0\n2,3.0\n");
        let ds = load_csv(f.path(), true, false).unwrap();
        assert_eq!(ds.spectra[0].label, None);
        assert_eq!(ds.spectra[1].label, Some(2));
    }

    #[test]
    fn ragged_row_is_reported() {
        let f = write_tmp("label,w1,w2,w3\n0,1,2,3\n1,1,2\n");
        match load_csv(f.path(), true, false) {
            Err(Error::RaggedRow { row, expected, found, .. }) => {
                assert_eq!((row, expected, found), (3, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_empty_are_rejected() {
        let f = write_tmp("w1,w2\n1.0,NaN\n");
        assert!(matches!(load_csv(f.path(), false, false), Err(Error::Parse { row: 2, column: 2, .. })));
        let f = write_tmp("w1,w2\n1.0,inf\n");
        assert!(matches!(load_csv(f.path(), false, false), Err(Error::Parse { .. })));
        let f = write_tmp("w1,w2\n");
        assert!(matches!(load_csv(f.path(), false, false), Err(Error::EmptyDataset(_))));
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), false, false), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn reference_block_round_trips() {
        let ds = SpectraDataset::new(vec![
            Spectrum::new(vec![0.1, 1.0 / 3.0]).with_label(1).with_reference(vec![2.0, -1e-300]),
            Spectrum::new(vec![4.0, 5.5]).with_label(0).with_reference(vec![6.0, 7.0]),
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), true, true).unwrap();
        assert_eq!(back.spectra, ds.spectra);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(normalize_minmax(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_minmax(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(normalize_minmax(&[-1.0, 0.0, 3.0]), vec![0.0, 0.25, 1.0]);
        let m = MinMax::fit(&[-1.0, 0.0, 3.0]);
        assert_eq!(m.invert(&m.apply(&[-1.0, 0.0, 3.0])), vec![-1.0, 0.0, 3.0]);
    }

    #[test]
    fn synthetic_noise_free_equals_reference() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for s in &ds.spectra {
            assert_eq!(Some(&s.intensities), s.reference.as_ref());
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn synthetic_noise_statistics() {
        let cfg = SynthConfig {
            n_classes: 2,
            spectra_per_class: 60,
            length: 100,
            noise_sigma: 0.05,
            seed: 7,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let templates = synthetic_templates(&cfg);
        let dist: f64 = templates[0]
            .iter()
            .zip(&templates[1])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.0);
        let residuals: Vec<f64> = ds
            .spectra
            .iter()
            .flat_map(|s| {
                let t = &templates[s.label.unwrap()];
                s.intensities.iter().zip(t).map(|(x, t)| x - t).collect::<Vec<_>>()
            })
            .collect();
        assert!(residuals.len() >= 10_000);
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.05).abs() < 0.005, "std {std}");
    }

    #[test]
    fn shift_spectrum_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(shift_spectrum(&x, 0), x.to_vec());
        assert_eq!(shift_spectrum(&x, 1), vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(shift_spectrum(&x, -2), vec![3.0, 4.0, 4.0, 4.0]);
        assert_eq!(shift_spectrum(&x, 9), vec![1.0; 4]);
    }

    #[test]
    fn shifted_synthetic_keeps_noise_and_labels_unchanged() {
        let plain = SynthConfig {
            n_classes: 2,
            spectra_per_class: 30,
            ..SynthConfig::default()
        };
        let shifted = SynthConfig { max_shift: 8, ..plain.clone() };
        let a = generate_synthetic(&plain).unwrap();
        let b = generate_synthetic(&shifted).unwrap();
        let templates = synthetic_templates(&plain);
        let mut moved = 0;
        for (x, y) in a.spectra.iter().zip(&b.spectra) {
            assert_eq!(x.label, y.label);
            let reference = y.reference.as_ref().unwrap();
            let by = (-8..=8)
                .find(|&s| shift_spectrum(&templates[y.label.unwrap()], s) == *reference)
                .expect("reference is a shifted template");
            moved += usize::from(by != 0);
            let noise_a: Vec<f64> = x.intensities.iter().zip(x.reference.as_ref().unwrap()).map(|(p, q)| p - q).collect();
            let noise_b: Vec<f64> = y.intensities.iter().zip(reference).map(|(p, q)| p - q).collect();
            for (p, q) in noise_a.iter().zip(&noise_b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        assert!(moved > 40);
        assert!(generate_synthetic(&SynthConfig { max_shift: 200, ..plain }).is_err());
    }

    #[test]
    fn invalid_synth_config() {
        let cfg = SynthConfig {
            noise_sigma: -1.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            n_classes: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn grouping_maps_names() {
        let ds = SpectraDataset::new(vec![
            Spectrum::new(vec![1.0]).with_label(0),
            Spectrum::new(vec![1.0]).with_label(1),
            Spectrum::new(vec![1.0]).with_label(2),
        ])
        .unwrap();
        let f = write_tmp(r#"{"0": "A", "1": "A", "2": "B"}"#);
        let g = load_grouping(f.path(), &ds).unwrap();
        assert_eq!(g.group_of(0).unwrap(), 0);
        assert_eq!(g.group_of(1).unwrap(), 0);
        assert_eq!(g.group_of(2).unwrap(), 1);
        let f = write_tmp(r#"{"0": "A", "1": "A"}"#);
        assert!(matches!(load_grouping(f.path(), &ds), Err(Error::MissingGroup(2))));
    }

    #[test]
    fn split_and_per_class() {
        let ds = generate_synthetic(&SynthConfig {
            spectra_per_class: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let (a, b) = ds.split(0.25, 3);
        assert_eq!(b.len(), 15);
        assert_eq!(a.len() + b.len(), ds.len());
        let few = ds.take_per_class(4);
        assert_eq!(few.len(), 12);
    }
}
