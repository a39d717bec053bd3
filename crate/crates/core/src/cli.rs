//! Command-line front end: `synth`, `train`, `eval`, `attack`, `sweep`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, default_class_names, generate_synthetic, Dataset, SynthConfig};
use crate::error::Error;
use crate::metrics::MetricsReport;
use crate::model::{decode_checkpoint, Checkpoint, ModelState};
use crate::perturb::{attack_evaluate, AttackConfig, AttackKind, NoiseScale};
use crate::seeds::{substream_seed, Stream};
use crate::sweep::{run_sweep, Grid, Table};
use crate::trainer::{evaluate_model, prepare, train, RunRecord, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "hgib", version, about = "Hypergraph information bottleneck experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV tables.
    Synth(SynthArgs),
    /// Train a model and report test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Evaluate a model under a structure or feature attack.
    Attack(AttackArgs),
    /// Run a label-fraction or attack grid over several seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Synthetic data: `default` or a JSON generator config.
    #[arg(long, conflicts_with = "features")]
    pub synth: Option<String>,
    /// Feature CSV, one per modality (repeatable).
    #[arg(long)]
    pub features: Vec<PathBuf>,
    /// Label CSV with `id,label` columns.
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    /// Comma-separated class names, in label-index order.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Neighbours per kNN hyperedge.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AttackFlags {
    #[arg(long, value_parser = ["none", "drop", "noise"])]
    pub attack: Option<String>,
    #[arg(long)]
    pub drop_fraction: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Reference magnitude for noise: `column-max` or `row-max`.
    #[arg(long, value_parser = ["column-max", "row-max"])]
    pub noise_scale: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Trained checkpoint; a model is trained first when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Label fractions to sweep, e.g. `0.8,0.6,0.4`.
    #[arg(long, value_delimiter = ',', conflicts_with = "attacks")]
    pub label_fractions: Vec<f64>,
    /// Attacks to sweep, e.g. `none,drop,noise`.
    #[arg(long, value_delimiter = ',', value_parser = ["none", "drop", "noise"])]
    pub attacks: Vec<String>,
    /// Seeds, e.g. `1,2,3,4,5`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

/// Data files named in a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataFiles {
    pub features: Vec<PathBuf>,
    pub labels: Option<PathBuf>,
    pub class_names: Option<Vec<String>>,
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub synth: Option<SynthConfig>,
    pub data: Option<DataFiles>,
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> crate::Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.train.validate()?;
        cfg.attack.validate()?;
        if let Some(s) = &cfg.synth {
            s.validate()?;
        }
        Ok(cfg)
    }
}

/// Failure reported to the shell.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// `metrics.json`. Everything except `generated_at_unix` is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    pub class_names: Vec<String>,
    pub metrics: MetricsReport,
    pub generated_at_unix: u64,
}

/// `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub record: RunRecord,
    pub generated_at_unix: u64,
}

/// `table.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub table: Table,
    pub config: TrainConfig,
    pub generated_at_unix: u64,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::from_json(&read(p)?)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_train_flags(cfg: &mut TrainConfig, a: &CommonArgs) -> CliResult<()> {
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.label_fraction {
        cfg.label_fraction = v;
    }
    if let Some(v) = a.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = a.mu {
        cfg.loss.mu = v;
    }
    if let Some(v) = a.xi {
        cfg.loss.xi = v;
    }
    if let Some(v) = a.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = a.k {
        cfg.k_neighbors = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_initial = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.layers {
        cfg.layers = v;
    }
    cfg.validate()?;
    Ok(())
}

fn apply_attack_flags(cfg: &mut AttackConfig, a: &AttackFlags) -> CliResult<()> {
    if let Some(kind) = &a.attack {
        cfg.kind = kind.parse::<AttackKind>()?;
    }
    if let Some(v) = a.drop_fraction {
        cfg.drop_fraction = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(s) = &a.noise_scale {
        cfg.noise_scale = match s.as_str() {
            "row-max" => NoiseScale::RowMax,
            _ => NoiseScale::ColumnMax,
        };
    }
    cfg.validate()?;
    Ok(())
}

fn synth_config(source: &str) -> CliResult<SynthConfig> {
    if source == "default" {
        Ok(SynthConfig::default())
    } else {
        Ok(SynthConfig::from_json(&read(Path::new(source))?)?)
    }
}

/// Resolves the dataset: flags first, then the config file.
fn load_dataset(args: &DataArgs, cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let file_data = cfg.data.clone().unwrap_or_default();
    let class_names = args
        .class_names
        .clone()
        .or(file_data.class_names.clone())
        .unwrap_or_else(default_class_names);

    if let Some(source) = &args.synth {
        return Ok(generate_synthetic(&synth_config(source)?)?);
    }
    let (features, labels) = if !args.features.is_empty() {
        (args.features.clone(), args.labels.clone())
    } else {
        (file_data.features.clone(), file_data.labels.clone())
    };
    if !features.is_empty() {
        let labels = labels.ok_or_else(|| CliError::usage("--labels is required with --features"))?;
        let raw = data::load_csv(&features, &labels, &class_names)?;
        return Ok(data::normalize(&raw));
    }
    if let Some(s) = &cfg.synth {
        return Ok(generate_synthetic(s)?);
    }
    Err(CliError::usage(
        "no dataset: pass --synth or --features/--labels (or set them in --config)",
    ))
}

fn metrics_doc(
    command: &str,
    seed: u64,
    attack: Option<AttackConfig>,
    dataset: &Dataset,
    metrics: MetricsReport,
) -> MetricsDocument {
    MetricsDocument {
        command: command.into(),
        seed,
        attack,
        class_names: dataset.class_names.clone(),
        metrics,
        generated_at_unix: now_unix(),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<(ModelState, Option<TrainConfig>)> {
    let bytes = read(path)?;
    let ckpt = Checkpoint::from_json(&bytes).map_err(CliError::from)?;
    let cfg = match &ckpt.train_config {
        Some(v) => Some(serde_json::from_value::<TrainConfig>(v.clone()).map_err(Error::from)?),
        None => None,
    };
    Ok((decode_checkpoint(&bytes)?, cfg))
}

fn run_synth(a: &SynthArgs) -> CliResult<()> {
    let mut cfg = match &a.data.synth {
        Some(source) => synth_config(source)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for m in &ds.modalities {
        let path = a.out.join(format!("{}.csv", m.name));
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        data::write_feature_csv(f, &ds.ids, m)?;
    }
    let path = a.out.join("labels.csv");
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    data::write_label_csv(f, &ds)?;
    write_json(&a.out, "synth.json", &cfg)?;
    Ok(())
}

fn run_train(a: &TrainArgs) -> CliResult<()> {
    let exp = load_config(a.common.config.as_deref())?;
    let mut cfg = exp.train.clone();
    apply_train_flags(&mut cfg, &a.common)?;
    let ds = load_dataset(&a.data, &exp)?;
    let trained = train(&ds, &cfg)?;

    let mut ckpt = trained.model.to_checkpoint();
    ckpt.train_config = Some(serde_json::to_value(&cfg).map_err(Error::from)?);
    write_json(&a.common.out, "checkpoint.json", &ckpt)?;
    let metrics = trained.record.metrics.clone();
    write_json(
        &a.common.out,
        "run.json",
        &RunDocument {
            record: trained.record,
            generated_at_unix: now_unix(),
        },
    )?;
    write_json(&a.common.out, "metrics.json", &metrics_doc("train", cfg.seed, None, &ds, metrics))?;
    Ok(())
}

fn run_eval(a: &EvalArgs) -> CliResult<()> {
    let exp = load_config(a.common.config.as_deref())?;
    let (model, saved) = load_checkpoint(&a.checkpoint)?;
    let mut cfg = saved.unwrap_or(exp.train.clone());
    apply_train_flags(&mut cfg, &a.common)?;
    let ds = load_dataset(&a.data, &exp)?;
    let metrics = evaluate_model(&ds, &model, &cfg)?;
    write_json(&a.common.out, "metrics.json", &metrics_doc("eval", cfg.seed, None, &ds, metrics))?;
    Ok(())
}

fn run_attack(a: &AttackArgs) -> CliResult<()> {
    let exp = load_config(a.common.config.as_deref())?;
    let ds = load_dataset(&a.data, &exp)?;
    let (model, mut cfg) = match &a.checkpoint {
        Some(path) => {
            let (model, saved) = load_checkpoint(path)?;
            (model, saved.unwrap_or(exp.train.clone()))
        }
        None => {
            let mut cfg = exp.train.clone();
            apply_train_flags(&mut cfg, &a.common)?;
            (train(&ds, &cfg)?.model, cfg)
        }
    };
    apply_train_flags(&mut cfg, &a.common)?;
    let mut attack = exp.attack;
    apply_attack_flags(&mut attack, &a.attack)?;
    attack.seed = substream_seed(cfg.seed, Stream::Attack);
    let (_, _, split) = prepare(&ds, &cfg)?;
    let metrics = attack_evaluate(&ds, &model, &split.test, cfg.k_neighbors, &attack)?;
    write_json(
        &a.common.out,
        "metrics.json",
        &metrics_doc("attack", cfg.seed, Some(attack), &ds, metrics),
    )?;
    Ok(())
}

fn run_sweep_cmd(a: &SweepArgs) -> CliResult<()> {
    let exp = load_config(a.common.config.as_deref())?;
    let mut cfg = exp.train.clone();
    apply_train_flags(&mut cfg, &a.common)?;
    let mut attack = exp.attack;
    apply_attack_flags(&mut attack, &a.attack)?;

    let grid = if !a.label_fractions.is_empty() {
        Grid::LabelFractions(a.label_fractions.clone())
    } else if !a.attacks.is_empty() {
        Grid::Attacks(
            a.attacks
                .iter()
                .map(|s| s.parse::<AttackKind>())
                .collect::<crate::Result<_>>()?,
        )
    } else {
        return Err(CliError::usage(
            "empty grid: pass --label-fractions or --attacks",
        ));
    };
    if a.seeds.is_empty() {
        return Err(CliError::usage("empty grid: pass --seeds"));
    }
    let ds = load_dataset(&a.data, &exp)?;
    let table = run_sweep(&ds, &cfg, &attack, &grid, &a.seeds)?;
    fs::create_dir_all(&a.common.out).map_err(|e| Error::io(&a.common.out, e))?;
    write_table_csv(&a.common.out.join("table.csv"), &table)?;
    write_json(
        &a.common.out,
        "table.json",
        &TableDocument {
            table,
            config: cfg,
            generated_at_unix: now_unix(),
        },
    )?;
    Ok(())
}

/// `table.csv`: one row per setting, `mean` and `std` columns per metric.
fn write_table_csv(path: &Path, table: &Table) -> CliResult<()> {
    let keys: Vec<&String> = table
        .rows
        .iter()
        .flat_map(|r| r.metrics.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header = vec!["setting".to_string()];
    for k in &keys {
        header.push(format!("{k}_mean"));
        header.push(format!("{k}_std"));
    }
    header.push("failures".into());
    w.write_record(&header).map_err(Error::from)?;
    for row in &table.rows {
        let mut rec = vec![row.setting.clone()];
        for k in &keys {
            match row.metrics.get(*k) {
                Some(ms) => {
                    rec.push(ms.mean.to_string());
                    rec.push(ms.std.map_or_else(String::new, |s| s.to_string()));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        rec.push(row.failures.len().to_string());
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Attack(a) => run_attack(a),
        Command::Sweep(a) => run_sweep_cmd(a),
    }
}
