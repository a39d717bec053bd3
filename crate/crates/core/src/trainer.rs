//! Seeded full-batch transductive training and multi-seed aggregation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::data::{fuse_and_build, Dataset};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::losses::{total_loss, LossConfig, Supervision};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    forward, init_params, predict_proba, ModelDims, ModelState, Propagation, DEFAULT_HIDDEN,
    DEFAULT_LAYERS,
};
use crate::seeds::{substream_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Decays linearly towards zero over `epochs`.
    pub lr_initial: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Fraction of training vertices whose labels are used.
    pub label_fraction: f64,
    pub k_neighbors: usize,
    pub hidden: usize,
    pub layers: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr_initial: 1e-4,
            seed: 0,
            train_fraction: 0.8,
            label_fraction: 1.0,
            k_neighbors: 20,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial >= 0.0) {
            return Err(Error::Parameter(format!("lr_initial must be >= 0, got {}", self.lr_initial)));
        }
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("label_fraction", self.label_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Parameter("hidden width and layer count must be >= 1".into()));
        }
        self.loss.validate()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning rate used at `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_initial * (1.0 - epoch as f64 / self.epochs as f64)
    }
}

/// Vertex masks for one run. `labeled ⊆ train`, `train ∩ test = ∅`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<bool>,
    pub labeled: Vec<bool>,
    pub test: Vec<bool>,
}

impl Split {
    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&m| m).count()
    }
}

/// Largest-remainder apportionment of `round(fraction · Σ sizes)` across groups.
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let quotas: Vec<f64> = sizes.iter().map(|&s| fraction * s as f64).collect();
    let mut counts: Vec<usize> = quotas
        .iter()
        .zip(sizes)
        .map(|(q, &s)| (q.floor() as usize).min(s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if counts[c] < sizes[c] {
            counts[c] += 1;
            remaining -= 1;
        }
    }
    counts
}

/// Stratified train/test split with a stratified labelled subset of the
/// training vertices, deterministic in `seed`.
pub fn split_and_mask(
    labels: &[usize],
    classes: usize,
    train_fraction: f64,
    label_fraction: f64,
    seed: u64,
) -> Result<Split> {
    for (name, f) in [("train_fraction", train_fraction), ("label_fraction", label_fraction)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Parameter(format!("{name} must lie in (0, 1], got {f}")));
        }
    }
    let n = labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (v, &y) in labels.iter().enumerate() {
        let bucket = by_class
            .get_mut(y)
            .ok_or_else(|| Error::Label(format!("vertex {v} has label {y} with {classes} classes")))?;
        bucket.push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for bucket in &mut by_class {
        bucket.shuffle(&mut rng);
    }

    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let train_counts = apportion(&sizes, train_fraction);
    let labeled_counts = apportion(&train_counts, label_fraction);

    let mut split = Split {
        train: vec![false; n],
        labeled: vec![false; n],
        test: vec![false; n],
    };
    for (c, bucket) in by_class.iter().enumerate() {
        for (i, &v) in bucket.iter().enumerate() {
            if i < train_counts[c] {
                split.train[v] = true;
                split.labeled[v] = i < labeled_counts[c];
            } else {
                split.test[v] = true;
            }
        }
        if labeled_counts[c] == 0 {
            return Err(Error::Data(format!("class {c} has no labelled training vertex")));
        }
        if train_counts[c] == sizes[c] {
            return Err(Error::Data(format!("class {c} has no test vertex")));
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Total loss before each epoch's update.
    pub loss_trace: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub metrics: MetricsReport,
    pub num_vertices: usize,
    pub num_hyperedges: usize,
    pub labeled_vertices: usize,
    pub test_vertices: usize,
    pub duration_secs: f64,
}

/// Outcome of [`train`]: the record plus what later evaluation needs.
#[derive(Debug, Clone)]
pub struct Trained {
    pub record: RunRecord,
    pub model: ModelState,
    pub split: Split,
}

/// Fused features, frozen hypergraph, and split for one configured run.
pub fn prepare(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Tensor, Hypergraph, Split)> {
    cfg.validate()?;
    let (x, g) = fuse_and_build(dataset, cfg.k_neighbors)?;
    let split = split_and_mask(
        &dataset.labels,
        dataset.num_classes(),
        cfg.train_fraction,
        cfg.label_fraction,
        substream_seed(cfg.seed, Stream::Split),
    )?;
    Ok((x, g, split))
}

pub fn model_dims(input: usize, classes: usize, cfg: &TrainConfig) -> ModelDims {
    ModelDims::uniform(input, cfg.hidden, cfg.layers, classes)
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    let started = Instant::now();
    let (x, g, split) = prepare(dataset, cfg)?;
    let classes = dataset.num_classes();
    let mut model = init_params(
        &model_dims(x.cols(), classes, cfg),
        substream_seed(cfg.seed, Stream::Init),
    )?;
    let sup = Supervision::new(&dataset.labels, &split.labeled, classes)?;
    let prop = Propagation::new(&g)?;
    let mut adam = Adam::new(model.params(), AdamConfig::default());

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut lr_trace = Vec::with_capacity(cfg.epochs);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let pv = prop.register(&mut tape)?;
    let shared = tape.len();
    for epoch in 0..cfg.epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite(op) => Error::Divergence {
                epoch,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        };
        tape.truncate(shared);
        let vars = model.register(&mut tape)?;
        let out = forward(&mut tape, xv, pv, &vars).map_err(diverged)?;
        let terms = total_loss(&mut tape, out.logits, &out.per_layer, &sup, &cfg.loss).map_err(diverged)?;
        let loss = tape.scalar(terms.total);
        tape.backward(terms.total)?;

        let grads: Vec<Tensor> = vars
            .all()
            .into_iter()
            .map(|v| tape.grad(v).expect("parameters track gradients").clone())
            .collect();
        let lr = cfg.lr_at(epoch);
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut model.params_mut(), &grad_refs, lr)?;
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
        loss_trace.push(loss);
        lr_trace.push(lr);
    }

    let probs = predict_proba(&model, &x, &prop)?;
    let metrics = evaluate(&probs, &dataset.labels, &split.test)?;
    let record = RunRecord {
        config: cfg.clone(),
        loss_trace,
        lr_trace,
        metrics,
        num_vertices: x.rows(),
        num_hyperedges: g.num_edges(),
        labeled_vertices: Split::count(&split.labeled),
        test_vertices: Split::count(&split.test),
        duration_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        record,
        model,
        split,
    })
}

/// Test-split metrics of `model` on the clean dataset.
pub fn evaluate_model(dataset: &Dataset, model: &ModelState, cfg: &TrainConfig) -> Result<MetricsReport> {
    let (x, g, split) = prepare(dataset, cfg)?;
    let probs = predict_proba(model, &x, &Propagation::new(&g)?)?;
    evaluate(&probs, &dataset.labels, &split.test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let count = values.len();
        if count == 0 {
            return None;
        }
        // shifted by the first value, so identical runs give exactly zero spread
        let shift = values[0];
        let offset = values.iter().map(|v| v - shift).sum::<f64>() / count as f64;
        let mean = shift + offset;
        let std = (count > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - shift - offset).powi(2)).sum();
            (ss / (count - 1) as f64).sqrt()
        });
        Some(Self { mean, std, count })
    }
}

/// Per-metric mean and spread over independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub auc_per_class: Vec<MeanStd>,
    pub auc_average: MeanStd,
    pub ppv_average: MeanStd,
    pub npv_average: MeanStd,
}

impl Summary {
    pub fn of(reports: &[MetricsReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Parameter("no runs to summarise".into()))?;
        let pick = |f: &dyn Fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
        };
        Ok(Self {
            auc_per_class: (0..first.auc_per_class.len())
                .map(|c| pick(&|r| r.auc_per_class[c]))
                .collect(),
            auc_average: pick(&|r| r.auc_average),
            ppv_average: pick(&|r| r.ppv_average),
            npv_average: pick(&|r| r.npv_average),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeed {
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub summary: Summary,
}

/// Trains once per seed (in parallel) and summarises the test metrics.
pub fn multi_seed(dataset: &Dataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<MultiSeed> {
    if seeds.len() < 2 {
        return Err(Error::Parameter("multi-seed aggregation needs at least two seeds".into()));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            train(dataset, &cfg).map(|t| t.record.metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiSeed {
        seeds: seeds.to_vec(),
        summary: Summary::of(&runs)?,
        runs,
    })
}
