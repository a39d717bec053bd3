//! Experiment grids: label-fraction and attack sweeps over several seeds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::perturb::{attack_evaluate, AttackConfig, AttackKind};
use crate::seeds::{substream_seed, Stream};
use crate::trainer::{train, MeanStd, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    LabelFractions(Vec<f64>),
    Attacks(Vec<AttackKind>),
}

impl Grid {
    fn len(&self) -> usize {
        match self {
            Grid::LabelFractions(f) => f.len(),
            Grid::Attacks(a) => a.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    /// Metric name → mean/std over the seeds that succeeded.
    pub metrics: BTreeMap<String, MeanStd>,
    pub runs: Vec<SeedResult>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub grid: Grid,
    pub seeds: Vec<u64>,
    pub class_names: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn row(&self, setting: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }
}

fn summarize(setting: String, class_names: &[String], outcomes: Vec<(u64, Result<MetricsReport>)>) -> TableRow {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(metrics) => runs.push(SeedResult { seed, metrics }),
            Err(e) => failures.push(CellFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mut metrics = BTreeMap::new();
    let mut put = |name: String, values: Vec<f64>| {
        if let Some(ms) = MeanStd::of(&values) {
            metrics.insert(name, ms);
        }
    };
    for (c, name) in class_names.iter().enumerate() {
        put(format!("auc_{name}"), runs.iter().map(|r| r.metrics.auc_per_class[c]).collect());
    }
    put("auc_average".into(), runs.iter().map(|r| r.metrics.auc_average).collect());
    put("ppv_average".into(), runs.iter().map(|r| r.metrics.ppv_average).collect());
    put("npv_average".into(), runs.iter().map(|r| r.metrics.npv_average).collect());
    TableRow {
        setting,
        metrics,
        runs,
        failures,
    }
}

/// Runs every grid setting for every seed. Failures are recorded per cell.
pub fn run_sweep(
    dataset: &Dataset,
    base: &TrainConfig,
    attack: &AttackConfig,
    grid: &Grid,
    seeds: &[u64],
) -> Result<Table> {
    if grid.len() == 0 || seeds.is_empty() {
        return Err(Error::Parameter("sweep grid and seed list must be non-empty".into()));
    }
    let rows = match grid {
        Grid::LabelFractions(fractions) => fractions
            .iter()
            .map(|&fraction| {
                let outcomes = seeds
                    .par_iter()
                    .map(|&seed| {
                        let cfg = TrainConfig {
                            seed,
                            label_fraction: fraction,
                            ..base.clone()
                        };
                        (seed, train(dataset, &cfg).map(|t| t.record.metrics))
                    })
                    .collect();
                summarize(fraction.to_string(), &dataset.class_names, outcomes)
            })
            .collect(),
        Grid::Attacks(kinds) => {
            // one clean training per seed, evaluated under every attack
            let per_seed: Vec<(u64, Result<Vec<Result<MetricsReport>>>)> = seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = TrainConfig {
                        seed,
                        ..base.clone()
                    };
                    let evals = train(dataset, &cfg).map(|trained| {
                        kinds
                            .iter()
                            .map(|&kind| {
                                let acfg = AttackConfig {
                                    kind,
                                    seed: substream_seed(seed, Stream::Attack),
                                    ..*attack
                                };
                                attack_evaluate(
                                    dataset,
                                    &trained.model,
                                    &trained.split.test,
                                    cfg.k_neighbors,
                                    &acfg,
                                )
                            })
                            .collect()
                    });
                    (seed, evals)
                })
                .collect();
            kinds
                .iter()
                .enumerate()
                .map(|(i, kind)| {
                    let outcomes = per_seed
                        .iter()
                        .map(|(seed, evals)| {
                            let r = match evals {
                                Ok(list) => match &list[i] {
                                    Ok(m) => Ok(m.clone()),
                                    Err(e) => Err(Error::Data(e.to_string())),
                                },
                                Err(e) => Err(Error::Data(format!("training failed: {e}"))),
                            };
                            (*seed, r)
                        })
                        .collect();
                    summarize(kind.to_string(), &dataset.class_names, outcomes)
                })
                .collect()
        }
    };
    Ok(Table {
        grid: grid.clone(),
        seeds: seeds.to_vec(),
        class_names: dataset.class_names.clone(),
        rows,
    })
}
