//! `prach-sentinel` experiment driver.
//!
//! Configuration is resolved with the precedence flags > file > defaults. Every
//! artifact written by a subcommand embeds the resolved configuration, including
//! the master seed, so any result can be regenerated from itself plus the binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cnn::{load_model, save_model, train, Model, ModelSpec, TrainConfig};
use crate::dataset::{
    feature_shape, generate_dataset, load_dataset, save_dataset, split, subsample, Dataset, GridSpec, Label,
};
use crate::metrics::{baseline_compare, evaluate, EvalReport};
use crate::receiver::{receive, ReceiverConfig};
use crate::scenario::ScenarioConfig;
use crate::seed::derive;
use crate::zc::zc_root;
use crate::Error;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PRACH_SENTINEL_THREADS";

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

pub const DATASET_FILE: &str = "dataset.prds";
pub const TRAIN_FILE: &str = "train.prds";
pub const VAL_FILE: &str = "val.prds";
pub const MODEL_FILE: &str = "model.prnn";
pub const HISTORY_CSV: &str = "history.csv";
pub const HISTORY_JSON: &str = "history.json";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const XFER_JSON: &str = "xfer.json";

// Sub-seed streams derived from the master seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_XFER: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_val: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_train: 2000, n_val: 400 }
    }
}

/// Complete declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub scenario: ScenarioConfig,
    pub grid: GridSpec,
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub receiver: ReceiverConfig,
    /// Interferer sequence index used at inference by `xfer`.
    pub xfer_seqidx_interf: usize,
    /// Where artifacts go; not part of the experiment, so never echoed.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 2024,
            scenario: ScenarioConfig::default(),
            grid: GridSpec {
                n_per_cell: 35,
                ..GridSpec::default()
            },
            split: SplitConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            receiver: ReceiverConfig::default(),
            xfer_seqidx_interf: 3,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn field<T>(name: &str, r: crate::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::config(format!("{name}: {e}")))
}

impl ExperimentConfig {
    /// Checks every module precondition before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        field("scenario", self.scenario.validate())?;
        field("grid", self.grid.validate())?;
        field("model", self.model.validate())?;
        field("train", self.train.validate())?;
        let shape = feature_shape(&self.scenario);
        if self.model.input != shape {
            return Err(CliError::config(format!(
                "model.input: {:?} does not match the scenario's feature shape {shape:?}",
                self.model.input
            )));
        }
        if self.split.n_train == 0 || self.split.n_val == 0 {
            return Err(CliError::config("split: n_train and n_val must be >= 1"));
        }
        field(
            "xfer_seqidx_interf",
            zc_root(self.xfer_seqidx_interf, self.scenario.numerology.n_zc).map(|_| ()),
        )?;
        if !(self.receiver.threshold_factor > 0.0 && self.receiver.threshold_factor.is_finite()) {
            return Err(CliError::config("receiver.threshold_factor: must be positive"));
        }
        Ok(())
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Failure carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptHeader(_)
            | Error::TruncatedTensor { .. }
            | Error::Json(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "prach-sentinel", version, about = "NR PRACH interference detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled dataset over the SNR x interference grid.
    Gen(Common),
    /// Train the classifier on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to split into train and validation sets [default: <out>/dataset.prds].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a trained model on a stored dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also score the correlation receiver's second-peak rule.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a model on fresh data with the training and an overridden interferer sequence index.
    Xfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the correlation receiver on one simulated observation.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true, default_value_t = -6.0)]
        snr: f64,
        /// Interferer power relative to the signal; omit for a clean observation.
        #[arg(long, allow_hyphen_values = true)]
        interf: Option<f64>,
    },
    /// Merge CSV files with identical headers, prefixing each row with its source.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub interf_grid: Option<Vec<f64>>,
    /// Root sequence index of the wanted UE.
    #[arg(long)]
    pub seqidx_signal: Option<usize>,
    /// Root sequence index of the interfering UE.
    #[arg(long)]
    pub seqidx_interf: Option<usize>,
    #[arg(long)]
    pub threshold_factor: Option<f64>,
}

impl Common {
    /// Applies flags over the file over defaults, then validates.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(g) = &self.snr_grid {
            cfg.grid.snr_grid = g.clone();
        }
        if let Some(g) = &self.interf_grid {
            cfg.grid.interf_grid = g.clone();
        }
        if let Some(u) = self.seqidx_signal {
            cfg.scenario.signal.root_u = u;
        }
        if let Some(u) = self.seqidx_interf {
            cfg.scenario.interferer.root_u = u;
        }
        if let Some(t) = self.threshold_factor {
            cfg.receiver.threshold_factor = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::io(path, e))?;
    write_file(path, text + "\n")
}

fn with_path<T>(path: &Path, r: crate::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn announce(cfg: &ExperimentConfig) {
    eprintln!("master seed: {}", cfg.master_seed);
}

fn print_metrics(tag: &str, r: &EvalReport) {
    let m = &r.metrics;
    println!(
        "{tag}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} (tp {} fp {} tn {} fn {})",
        m.accuracy, m.precision, m.recall, m.f1, r.confusion.tp, r.confusion.fp, r.confusion.tn, r.confusion.fn_
    );
}

/// Generates the dataset described by `cfg` and writes it under `cfg.out_dir`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let mut ds = generate_dataset(&cfg.grid, &cfg.scenario, cfg.master_seed)?;
    ds.meta.experiment = Some(cfg.echo());
    let path = cfg.out_dir.join(DATASET_FILE);
    with_path(&path, save_dataset(&ds, &path))?;

    let mut cells: BTreeMap<(i64, Option<i64>), usize> = BTreeMap::new();
    for s in &ds.samples {
        let key = ((s.snr_db * 1000.0).round() as i64, s.interf_power_db.map(|i| (i * 1000.0).round() as i64));
        *cells.entry(key).or_default() += 1;
    }
    println!("wrote {} samples to {}", ds.len(), path.display());
    println!("snr_db,interf_db,count");
    for ((snr, interf), n) in cells {
        let interf = interf.map_or("none".to_string(), |i| (i as f64 / 1000.0).to_string());
        println!("{},{interf},{n}", snr as f64 / 1000.0);
    }
    Ok(path)
}

/// Splits a dataset into `n_train` / `n_val` by stratified split and subsampling.
pub fn split_for_training(ds: &Dataset, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    let total = cfg.split.n_train + cfg.split.n_val;
    if ds.len() < total {
        return Err(CliError::config(format!(
            "split: dataset has {} samples, n_train + n_val = {total}",
            ds.len()
        )));
    }
    let frac = cfg.split.n_train as f64 / ds.len() as f64;
    let (tr, va) = split(ds, frac, derive(cfg.master_seed, STREAM_SPLIT))?;
    let va = if va.len() > cfg.split.n_val {
        subsample(&va, cfg.split.n_val, derive(cfg.master_seed, STREAM_SUBSAMPLE))?
    } else {
        va
    };
    Ok((tr, va))
}

/// Trains the classifier and writes the model, history and split datasets.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path) -> Result<(), CliError> {
    let ds = with_path(dataset, load_dataset(dataset))?;
    if ds.meta.feature_shape != cfg.model.input {
        return Err(CliError::config(format!(
            "model.input: {:?} does not match dataset feature shape {:?}",
            cfg.model.input, ds.meta.feature_shape
        )));
    }
    let (mut tr, mut va) = split_for_training(&ds, cfg)?;
    tr.meta.experiment = Some(cfg.echo());
    va.meta.experiment = Some(cfg.echo());
    eprintln!("training on {} samples, validating on {}", tr.len(), va.len());

    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive(cfg.master_seed, STREAM_SHUFFLE);
    let mut model = Model::<f32>::init(cfg.model, derive(cfg.master_seed, STREAM_INIT))?;
    let history = train(&mut model, &tr, &va, &tcfg)?;
    ensure_dir(&cfg.out_dir)?;

    let echo = cfg.echo();
    let out = &cfg.out_dir;
    let model_path = out.join(MODEL_FILE);
    with_path(&model_path, save_model(&model, &model_path, Some(&echo)))?;
    write_file(&out.join(HISTORY_CSV), history.to_csv())?;
    write_json(
        &out.join(HISTORY_JSON),
        &json!({ "config": echo, "dataset": dataset, "history": history }),
    )?;
    for (name, d) in [(TRAIN_FILE, &tr), (VAL_FILE, &va)] {
        let p = out.join(name);
        with_path(&p, save_dataset(d, &p))?;
    }
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}, {:.1}s",
            last.epoch, last.train_loss, last.train_acc, last.val_loss, last.val_acc, history.train_time_s
        );
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

/// Training time recorded by `train` next to the model, if present.
fn train_time(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join(HISTORY_JSON)).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v["history"]["train_time_s"].as_f64()
}

/// Evaluates a stored model on a stored dataset, writing JSON and CSV reports.
pub fn cmd_eval(cfg: &ExperimentConfig, model: &Path, dataset: &Path, baseline: bool) -> Result<EvalReport, CliError> {
    let (m, model_echo) = with_path(model, load_model(model))?;
    let ds = with_path(dataset, load_dataset(dataset))?;
    ensure_dir(&cfg.out_dir)?;
    let mut report = evaluate(&m, &ds)?;
    report.train_time_s = model.parent().and_then(train_time);
    report.config = Some(json!({
        "eval": cfg.echo(),
        "model": model_echo,
        "dataset": ds.meta.experiment,
        "model_path": model,
        "dataset_path": dataset,
    }));
    print_metrics("cnn", &report);

    let mut doc = json!({ "cnn": report });
    if baseline {
        let mut b = baseline_compare(&ds, &cfg.receiver)?;
        b.config = report.config.clone();
        print_metrics("baseline", &b);
        doc["baseline"] = serde_json::to_value(&b).expect("report serializes");
    }
    write_json(&cfg.out_dir.join(EVAL_JSON), &doc)?;
    write_file(&cfg.out_dir.join(EVAL_CSV), report.to_csv())?;
    Ok(report)
}

/// Regenerates inference data with the training-time interferer index and with
/// `xfer_seqidx_interf`, and reports both side by side.
pub fn cmd_xfer(cfg: &ExperimentConfig, model: &Path) -> Result<BTreeMap<String, EvalReport>, CliError> {
    let (m, model_echo) = with_path(model, load_model(model))?;
    ensure_dir(&cfg.out_dir)?;
    let seed = derive(cfg.master_seed, STREAM_XFER);
    let trained_idx = cfg.scenario.interferer.root_u;
    let mut reports = BTreeMap::new();
    for idx in [trained_idx, cfg.xfer_seqidx_interf] {
        let mut sc = cfg.scenario.clone();
        sc.interferer.root_u = idx;
        let ds = generate_dataset(&cfg.grid, &sc, seed)?;
        let mut r = evaluate(&m, &ds)?;
        r.config = Some(json!({
            "xfer": cfg.echo(),
            "model": model_echo,
            "seqidx_interf": idx,
            "dataset_seed": seed,
        }));
        print_metrics(&format!("seqidx_{idx}"), &r);
        reports.insert(format!("seqidx_{idx}"), r);
    }
    write_json(&cfg.out_dir.join(XFER_JSON), &reports)?;
    Ok(reports)
}

/// Simulates one observation and runs the correlation receiver on it.
pub fn cmd_detect(cfg: &ExperimentConfig, snr_db: f64, interf_db: Option<f64>) -> Result<Value, CliError> {
    let obs = cfg.scenario.observe(snr_db, interf_db, cfg.master_seed)?;
    let sc = &cfg.scenario;
    let root = zc_root(sc.signal.root_u, sc.numerology.n_zc)?;
    let (_, det) = receive(&obs.per_antenna, &sc.numerology, &root, sc.signal.n_cs, &cfg.receiver)?;
    let doc = json!({
        "detection": det,
        "timing_offset_burst_samples": det.timing_offset_burst_samples(&sc.numerology),
        "expected_rapid": sc.signal.preamble_index_v,
        "snr_db": snr_db,
        "interf_power_db": interf_db,
        "label": if interf_db.is_some() { Label::Interfered } else { Label::Clean },
        "config": cfg.echo(),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    Ok(doc)
}

/// Concatenates CSVs sharing one header, adding a leading `source` column.
pub fn cmd_report(inputs: &[PathBuf]) -> Result<String, CliError> {
    let mut header: Option<String> = None;
    let mut out = String::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.lines();
        let h = lines
            .next()
            .ok_or_else(|| CliError::io(path, "empty CSV"))?
            .to_string();
        match &header {
            None => {
                out.push_str(&format!("source,{h}\n"));
                header = Some(h);
            }
            Some(prev) if *prev != h => {
                return Err(CliError::io(path, format!("header `{h}` differs from `{prev}`")));
            }
            Some(_) => {}
        }
        let source = path.display().to_string().replace(',', "_");
        for line in lines.filter(|l| !l.is_empty()) {
            out.push_str(&format!("{source},{line}\n"));
        }
    }
    Ok(out)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("{THREADS_ENV}: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen(common) => {
            let cfg = common.resolve()?;
            announce(&cfg);
            cmd_gen(&cfg)?;
        }
        Command::Train { common, dataset } => {
            let cfg = common.resolve()?;
            announce(&cfg);
            let dataset = dataset.unwrap_or_else(|| cfg.out_dir.join(DATASET_FILE));
            cmd_train(&cfg, &dataset)?;
        }
        Command::Eval {
            common,
            model,
            dataset,
            baseline,
        } => {
            let cfg = common.resolve()?;
            announce(&cfg);
            let model = model.unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE));
            let dataset = dataset.unwrap_or_else(|| cfg.out_dir.join(VAL_FILE));
            cmd_eval(&cfg, &model, &dataset, baseline)?;
        }
        Command::Xfer { common, model } => {
            let cfg = common.resolve()?;
            announce(&cfg);
            let model = model.unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE));
            cmd_xfer(&cfg, &model)?;
        }
        Command::Detect { common, snr, interf } => {
            let cfg = common.resolve()?;
            announce(&cfg);
            cmd_detect(&cfg, snr, interf)?;
        }
        Command::Report { inputs, out } => {
            let merged = cmd_report(&inputs)?;
            match out {
                Some(p) => write_file(&p, merged)?,
                None => print!("{merged}"),
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the subcommand and maps failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"master_seed": 9, "train": {"epochs": 4}, "grid": {"n_per_cell": 2}}"#).unwrap();
        let common = Common {
            config: Some(path),
            epochs: Some(7),
            ..Common::default()
        };
        let cfg = common.resolve().unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.grid.n_per_cell, 2);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn missing_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"scenario": {"signal": {"preamble_index_v": 32, "n_cs": 13}}}"#).unwrap();
        let err = Common {
            config: Some(path),
            ..Common::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert!(err.message.contains("root_u"), "{}", err.message);
    }

    #[test]
    fn invalid_values_name_their_section() {
        let err = Common {
            seqidx_interf: Some(839),
            ..Common::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert!(err.message.starts_with("scenario"), "{}", err.message);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Diverged { epoch: 3 }).code, EXIT_DIVERGED);
        assert_eq!(CliError::from(Error::BadMagic { expected: "PRNN" }).code, EXIT_IO);
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).code, EXIT_CONFIG);
    }

    #[test]
    fn report_merges_matching_headers() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(&a, "x,y\n1,2\n").unwrap();
        fs::write(&b, "x,y\n3,4\n5,6\n").unwrap();
        let merged = cmd_report(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.lines().count(), 4);
        assert!(merged.starts_with("source,x,y\n"));
        let c = dir.path().join("c.csv");
        fs::write(&c, "x,z\n1,2\n").unwrap();
        assert_eq!(cmd_report(&[a, c]).unwrap_err().code, EXIT_IO);
    }
}
