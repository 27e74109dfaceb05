//! Command-line entry point.
//!
//! Every subcommand resolves its settings as flags over a JSON config file
//! over built-in defaults, runs inside a thread pool of `--threads` workers
//! and finishes by writing `<command>.run.json` into `--out-dir`
//! (`plot-<kind>.run.json` for figures).

mod commands;
mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Error;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable data or invalid configuration.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smae", version, about = "Masked-autoencoder pretraining for 1D spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with clean references.
    Synth(commands::SynthArgs),
    /// Self-supervised masked pretraining of encoder and decoder.
    Pretrain(commands::PretrainArgs),
    /// Denoise spectra by masked reconstruction with a pretrained model.
    Reconstruct(commands::ReconstructArgs),
    /// Train a classifier, from a pretrained encoder or from scratch.
    Finetune(commands::FinetuneArgs),
    /// Score a classifier or a set of reconstructions.
    Eval(commands::EvalArgs),
    /// k-means on raw spectra or encoder embeddings.
    Cluster(commands::ClusterArgs),
    /// Sweep one pretraining setting and report downstream accuracy.
    Ablate(commands::AblateArgs),
    /// Grad-CAM relevance maps for single spectra or class means.
    Gradcam(commands::GradcamArgs),
    /// Render SVG figures from earlier outputs.
    Plot(plot::PlotArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Pretrain(_) => "pretrain",
            Command::Reconstruct(_) => "reconstruct",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Cluster(_) => "cluster",
            Command::Ablate(_) => "ablate",
            Command::Gradcam(_) => "gradcam",
            Command::Plot(_) => "plot",
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Seed from which all randomness derives [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it [default: 1]
    #[arg(long, env = "SMAE_THREADS")]
    threads: Option<usize>,
    /// JSON file of settings (or a run.json manifest); flags take precedence
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory for every output [default: .]
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Skip per-spectrum min-max normalization
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    no_normalize: Option<bool>,
}

/// Resolved shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub no_normalize: bool,
}

impl Default for Common {
    fn default() -> Self {
        Common {
            seed: 0,
            threads: 1,
            out_dir: PathBuf::from("."),
            no_normalize: false,
        }
    }
}

impl Common {
    /// `name` placed under the output directory.
    pub fn output(&self, name: &Path) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Record of one command run, written as `<command>.run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> crate::Result<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What a command hands back for the manifest.
#[derive(Debug, Default)]
pub(crate) struct Outcome {
    /// Manifest stem when it differs from the command name.
    pub manifest: Option<String>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

impl Outcome {
    pub fn artifact(&mut self, key: &str, path: &Path) {
        self.artifacts.insert(key.to_string(), path.to_path_buf());
    }

    /// Non-finite values are left out; JSON cannot carry them.
    pub fn metric(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(key.to_string(), value);
        }
    }
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Writes through a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let Value::Object(mut map) = value else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())).into());
    };
    if map.contains_key("command") {
        if let Some(Value::Object(inner)) = map.remove("config") {
            return Ok(inner);
        }
    }
    Ok(map)
}

/// Overlays the config file and then the flags on the defaults of `T`.
/// Flags serialized as `null` were not given. Keys unknown to `T` are
/// rejected.
pub(crate) fn resolve<T>(config: Option<&Path>, flags: &impl Serialize) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Value::Object(mut merged) = serde_json::to_value(T::default()).map_err(Error::from)? else {
        unreachable!("settings serialize as objects");
    };
    let known: Vec<String> = merged.keys().cloned().collect();
    if let Some(path) = config {
        for (k, v) in read_config_file(path)? {
            if !known.contains(&k) {
                return Err(Error::Config(format!("{}: unknown setting {k:?}", path.display())).into());
            }
            merged.insert(k, v);
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags).map_err(Error::from)? {
        merged.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("settings: {e}")).into())
}

fn dispatch(command: Command) -> CliResult<()> {
    let name = command.name();
    let started = unix_ms();
    let (common, config, mut outcome) = match command {
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Plot(a) => plot::plot(a),
    }?;
    for (k, v) in &outcome.metrics {
        println!("{k}: {v:.6}");
    }
    for path in outcome.artifacts.values() {
        println!("wrote {}", path.display());
    }
    let stem = outcome.manifest.take().unwrap_or_else(|| name.to_string());
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        seed: common.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: outcome.artifacts,
        metrics: outcome.metrics,
    };
    let path = common.output(Path::new(&format!("{stem}.run.json")));
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write_atomic(&path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The clap definition of the whole command line.
pub fn command() -> clap::Command {
    <Cli as clap::CommandFactory>::command()
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
