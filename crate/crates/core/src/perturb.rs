//! Test-time robustness attacks: random hyperedge removal and Gaussian feature noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{fuse_and_build, Dataset};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{predict_proba, ModelState, Propagation};

/// Resampling budget for edge drops that would leave a vertex uncovered.
pub const DROP_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Drop,
    Noise,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "drop" => Ok(Self::Drop),
            "noise" => Ok(Self::Noise),
            other => Err(Error::Parameter(format!(
                "unknown attack {other:?} (expected none, drop or noise)"
            ))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Drop => "drop",
            Self::Noise => "noise",
        })
    }
}

/// How the reference magnitude `r` of the noise is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// Mean over feature dimensions of each dimension's maximum across vertices.
    #[default]
    ColumnMax,
    /// Mean over vertices of each vertex's maximum feature value.
    RowMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub drop_fraction: f64,
    pub rho: f64,
    pub noise_scale: NoiseScale,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            drop_fraction: 0.2,
            rho: 0.01,
            noise_scale: NoiseScale::ColumnMax,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::Parameter(format!(
                "drop_fraction must lie in [0, 1), got {}",
                self.drop_fraction
            )));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Parameter(format!("rho must be >= 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Removes `⌊fraction · |E|⌋` uniformly chosen hyperedges, resampling until every
/// vertex keeps at least one hyperedge.
pub fn drop_hyperedges(g: &Hypergraph, fraction: f64, seed: u64) -> Result<Hypergraph> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("drop fraction must lie in [0, 1), got {fraction}")));
    }
    let total = g.num_edges();
    let remove = (fraction * total as f64).floor() as usize;
    if remove == 0 {
        return Ok(g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..DROP_RETRIES {
        let mut dropped = vec![false; total];
        for e in sample(&mut rng, total, remove) {
            dropped[e] = true;
        }
        let keep: Vec<usize> = (0..total).filter(|&e| !dropped[e]).collect();
        let mut covered = vec![false; g.num_vertices()];
        for &e in &keep {
            for &v in g.edge(e) {
                covered[v] = true;
            }
        }
        if covered.iter().all(|&c| c) {
            return g.select_edges(&keep);
        }
    }
    Err(Error::Structure(format!(
        "no drop of {remove}/{total} hyperedges kept every vertex covered in {DROP_RETRIES} attempts"
    )))
}

/// Reference magnitude `r` of a feature matrix.
pub fn noise_reference(x: &Tensor, scale: NoiseScale) -> f64 {
    let maxima: Vec<f64> = match scale {
        NoiseScale::ColumnMax => (0..x.cols())
            .map(|c| x.column(c).into_iter().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        NoiseScale::RowMax => (0..x.rows())
            .map(|r| x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    if maxima.is_empty() {
        return 0.0;
    }
    maxima.iter().sum::<f64>() / maxima.len() as f64
}

/// `X + ρ · r · E` with independent standard-normal entries in `E`.
pub fn inject_feature_noise(x: &Tensor, rho: f64, scale: NoiseScale, seed: u64) -> Result<Tensor> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Parameter(format!("rho must be >= 0, got {rho}")));
    }
    if !x.is_finite() {
        return Err(Error::Data("features contain non-finite values".into()));
    }
    if rho == 0.0 {
        return Ok(x.clone());
    }
    let sigma = rho * noise_reference(x, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for v in out.values_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

/// Applies the attack to the evaluation-time inputs and scores the (unchanged)
/// model on `test_mask`. Noise perturbs the fused features; the hypergraph stays
/// the one built from clean features.
pub fn attack_evaluate(
    dataset: &Dataset,
    model: &ModelState,
    test_mask: &[bool],
    k_neighbors: usize,
    cfg: &AttackConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let (mut x, mut g) = fuse_and_build(dataset, k_neighbors)?;
    match cfg.kind {
        AttackKind::None => {}
        AttackKind::Drop => g = drop_hyperedges(&g, cfg.drop_fraction, cfg.seed)?,
        AttackKind::Noise => x = inject_feature_noise(&x, cfg.rho, cfg.noise_scale, cfg.seed)?,
    }
    let probs = predict_proba(model, &x, &Propagation::new(&g)?)?;
    evaluate(&probs, &dataset.labels, test_mask)
}
