//! Configuration parsing and result emission for the `amc` binary.
//!
//! A run reads an optional TOML file, applies command-line overrides, runs
//! the Monte Carlo experiment and writes one directory per run:
//!
//! ```text
//! <out>/<timestamp>_seed<seed>/
//!     manifest.json
//!     config.toml            exact configuration used; feed back with --config
//!     pcc_<classifier>.csv   snr_db,L,<format ids>,pcc,mean_ms
//!     confusion/<classifier>_snr<snr>_L<L>.csv
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use amc_core::{ClassifierKind, ClassifierSpec, ExperimentConfig, ExperimentResult, FormatId, InitSpec};
use chrono::{DateTime, Utc};
use clap::Parser;
use serde::Serialize;
use thiserror::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("experiment failed: {0}")]
    Run(#[from] amc_core::AmcError),
    #[error("{}: {message}", path.display())]
    Encode { path: PathBuf, message: String },
}

impl CliError {
    /// Process exit status: 2 for bad input, 1 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Monte Carlo evaluation of blind modulation classifiers.
///
/// Flags override values from `--config`; anything unset takes its default.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "amc", version)]
pub struct Args {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "a,b,c")]
    pub snr: Option<Vec<f64>>,
    /// Sensor counts.
    #[arg(long, value_delimiter = ',', value_name = "a,b,c")]
    pub sensors: Option<Vec<usize>>,
    /// Symbols per observation.
    #[arg(long, value_name = "N")]
    pub symbols: Option<usize>,
    /// Trials per true format and cell.
    #[arg(long, value_name = "K")]
    pub trials: Option<usize>,
    /// Master seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Candidate formats, e.g. 8PSK,8QAM,16PSK,16QAM.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub formats: Option<Vec<FormatId>>,
    /// Classifiers: clairvoyant, clairvoyant-em, zero-offset-em, gem, em-joint[:T[:E]].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub classifiers: Option<Vec<ClassifierKind>>,
    /// Initialization for every estimating classifier:
    /// perturbed:da,dtheta,deps | sa:uniform | sa:nonuniform | fixed.
    #[arg(long, value_name = "SCHEME")]
    pub init: Option<InitSpec>,
    /// Parent directory of the run directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub out: PathBuf,
}

/// Parses an experiment configuration from TOML text. Missing keys take
/// defaults; the result is validated.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Config(config_message(e)))?;
    Ok(cfg)
}

fn config_message(e: amc_core::AmcError) -> String {
    match e {
        amc_core::AmcError::Config(m) => m,
        other => other.to_string(),
    }
}

/// Merges defaults, the optional config file and the flags, in increasing
/// precedence, and validates the result.
pub fn parse_config(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            toml::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.snr {
        cfg.snr_db = v.clone();
    }
    if let Some(v) = &args.sensors {
        cfg.sensors = v.clone();
    }
    if let Some(v) = args.symbols {
        cfg.symbols = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.formats {
        cfg.formats = v.clone();
    }
    if let Some(kinds) = &args.classifiers {
        cfg.classifiers = kinds.iter().map(|&k| ClassifierSpec::new(k, InitSpec::default())).collect();
    }
    if let Some(init) = args.init {
        for c in &mut cfg.classifiers {
            c.init = init;
        }
    }
    cfg.validate().map_err(|e| CliError::Config(config_message(e)))?;
    Ok(RunConfig { experiment: cfg, out: args.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)) })
}

/// Serializes a configuration so that [`parse_config_str`] reproduces it.
pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Encode { path: PathBuf::from("config.toml"), message: e.to_string() })
}

#[derive(Debug, Serialize)]
pub struct TableEntry {
    pub classifier: String,
    pub file: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    /// Decimal string so that the full `u64` range survives JSON readers.
    pub seed: String,
    pub config_file: String,
    pub config: ExperimentConfig,
    pub tables: Vec<TableEntry>,
    pub confusion_dir: String,
    pub classifier_errors: Vec<String>,
}

/// File-name-safe form of a classifier label.
pub fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Creates `<out>/<timestamp>_seed<seed>`, appending `_<n>` if a run with
/// the same name already exists.
fn create_run_dir(out: &Path, started: DateTime<Utc>, seed: u64) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let base = format!("{}_seed{seed}", started.format("%Y%m%dT%H%M%SZ"));
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}_{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Io { path: dir, source: e }),
        }
    }
    unreachable!()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn csv_bytes(path: &Path, rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let encode = |e: csv::Error| CliError::Encode { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(encode)?;
    }
    w.into_inner().map_err(|e| CliError::Encode { path: path.to_path_buf(), message: e.to_string() })
}

/// Rows of the per-classifier table, header first, cells in configuration order.
pub fn pcc_table(result: &ExperimentResult, cfg: &ExperimentConfig, label: &str) -> Vec<Vec<String>> {
    let mut header = vec!["snr_db".to_string(), "L".to_string()];
    header.extend(result.formats.iter().map(|f| f.to_string()));
    header.extend(["pcc".to_string(), "mean_ms".to_string()]);
    let mut rows = vec![header];
    for &snr in &cfg.snr_db {
        for &l in &cfg.sensors {
            let c = result.cell(label, snr, l).expect("every configured cell is present");
            let mut row = vec![snr.to_string(), l.to_string()];
            row.extend(c.per_format.iter().map(|p| p.to_string()));
            row.push(c.pcc.to_string());
            row.push(format!("{:.3}", c.mean_ms));
            rows.push(row);
        }
    }
    rows
}

/// Rows of one cell's confusion matrix: true format down, decision across.
pub fn confusion_table(result: &ExperimentResult, label: &str, snr: f64, sensors: usize) -> Vec<Vec<String>> {
    let c = result.cell(label, snr, sensors).expect("every configured cell is present");
    let mut header = vec!["true\\decided".to_string()];
    header.extend(result.formats.iter().map(|f| f.to_string()));
    let mut rows = vec![header];
    for (f, counts) in result.formats.iter().zip(&c.confusion.counts) {
        let mut row = vec![f.to_string()];
        row.extend(counts.iter().map(|n| n.to_string()));
        rows.push(row);
    }
    rows
}

/// Writes a finished experiment to a fresh run directory under `out` and
/// returns that directory.
pub fn emit_results(
    result: &ExperimentResult,
    cfg: &ExperimentConfig,
    out: &Path,
    started: DateTime<Utc>,
    finished: DateTime<Utc>,
) -> Result<PathBuf, CliError> {
    let dir = create_run_dir(out, started, cfg.seed)?;
    let config_path = dir.join("config.toml");
    write_file(&config_path, config_to_toml(cfg)?.as_bytes())?;

    let confusion_dir = dir.join("confusion");
    fs::create_dir(&confusion_dir).map_err(CliError::io(&confusion_dir))?;
    let mut tables = Vec::new();
    for label in &result.classifiers {
        let stem = file_stem(label);
        let file = format!("pcc_{stem}.csv");
        let path = dir.join(&file);
        write_file(&path, &csv_bytes(&path, pcc_table(result, cfg, label))?)?;
        tables.push(TableEntry { classifier: label.clone(), file });
        for &snr in &cfg.snr_db {
            for &l in &cfg.sensors {
                let path = confusion_dir.join(format!("{stem}_snr{snr}_L{l}.csv"));
                write_file(&path, &csv_bytes(&path, confusion_table(result, label, snr, l))?)?;
            }
        }
    }

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started: started.to_rfc3339(),
        finished: finished.to_rfc3339(),
        seed: cfg.seed.to_string(),
        config_file: "config.toml".to_string(),
        config: cfg.clone(),
        tables,
        confusion_dir: "confusion".to_string(),
        classifier_errors: result.error_log.clone(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| CliError::Encode { path: path.clone(), message: e.to_string() })?;
    write_file(&path, &json)?;
    Ok(dir)
}

/// Parses, runs and emits; reports progress through `progress(done, total)`.
pub fn run(args: &Args, progress: impl FnMut(usize, usize)) -> Result<PathBuf, CliError> {
    let rc = parse_config(args)?;
    let started = Utc::now();
    let result = amc_core::harness::run_experiment_with_progress(&rc.experiment, progress)?;
    emit_results(&result, &rc.experiment, &rc.out, started, Utc::now())
}
