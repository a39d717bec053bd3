//! Feature-table ingestion, min-max normalisation, modality fusion, and a
//! seeded synthetic dataset generator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::hypergraph::{build_knn_hyperedges, concat_hypergraphs, Hypergraph};

pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["NC", "MCI", "AD"];

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    pub name: String,
    pub columns: Vec<String>,
    /// n × d, rows in dataset vertex order.
    pub features: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub modalities: Vec<Modality>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        ids: Vec<String>,
        modalities: Vec<Modality>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = ids.len();
        if modalities.is_empty() {
            return Err(Error::Data("dataset has no modalities".into()));
        }
        for m in &modalities {
            if m.features.rows() != n {
                return Err(Error::Data(format!(
                    "modality {} has {} rows for {n} vertices",
                    m.name,
                    m.features.rows()
                )));
            }
            if m.columns.len() != m.features.cols() {
                return Err(Error::Data(format!(
                    "modality {} names {} columns but has {}",
                    m.name,
                    m.columns.len(),
                    m.features.cols()
                )));
            }
        }
        if labels.len() != n {
            return Err(Error::Data(format!("{} labels for {n} vertices", labels.len())));
        }
        if let Some((v, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_names.len()) {
            return Err(Error::Label(format!(
                "vertex {} has label {y} but only {} classes",
                ids[v],
                class_names.len()
            )));
        }
        Ok(Self {
            ids,
            modalities,
            labels,
            class_names,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Column-wise concatenation `X_1 ‖ … ‖ X_m`.
    pub fn fused_features(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.modalities.iter().map(|m| &m.features).collect();
        Tensor::hconcat(&parts).expect("modalities share n")
    }
}

/// Parsed `id,<feature>...` table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: Tensor,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Parses a feature CSV: header row with `id` first, then finite numeric columns.
pub fn parse_feature_table(text: &str) -> Result<FeatureTable> {
    let mut rdr = reader(text);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Data(format!(
            "first header column must be `id`, found {:?}",
            header.get(0).unwrap_or("")
        )));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(Error::Data("feature table has no feature columns".into()));
    }
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != columns.len() + 1 {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                columns.len() + 1
            )));
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("duplicate id {id:?}")));
        }
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!("id {id:?}, column {:?}: cannot parse {field:?}", columns[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "id {id:?}, column {:?}: non-finite value",
                    columns[c]
                )));
            }
            values.push(v);
        }
        ids.push(id);
    }
    let values = Tensor::new(ids.len(), columns.len(), values)?;
    Ok(FeatureTable {
        ids,
        columns,
        values,
    })
}

/// Parses an `id,label` CSV. Labels are class names from `class_names` or
/// integer class indices.
pub fn parse_label_table(text: &str, class_names: &[String]) -> Result<Vec<(String, usize)>> {
    let mut rdr = reader(text);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Data(format!(
            "label header must be `id,label`, found {:?}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let lookup: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let (id, raw) = match (record.get(0), record.get(1), record.len()) {
            (Some(id), Some(raw), 2) => (id.to_string(), raw),
            _ => return Err(Error::Data(format!("malformed label row {:?}", record))),
        };
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("duplicate id {id:?} in labels")));
        }
        let label = match lookup.get(raw) {
            Some(&i) => i,
            None => match raw.parse::<usize>() {
                Ok(i) if i < class_names.len() => i,
                _ => {
                    return Err(Error::Label(format!(
                        "id {id:?}: {raw:?} is not one of {class_names:?}"
                    )))
                }
            },
        };
        out.push((id, label));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads one CSV per modality plus a label CSV and aligns every table to the
/// row order of the first modality.
pub fn load_csv(modality_paths: &[PathBuf], labels_path: &Path, class_names: &[String]) -> Result<Dataset> {
    if modality_paths.is_empty() {
        return Err(Error::Data("no modality files given".into()));
    }
    let tables = modality_paths
        .iter()
        .map(|p| parse_feature_table(&read_text(p)?))
        .collect::<Result<Vec<_>>>()?;
    let labels = parse_label_table(&read_text(labels_path)?, class_names)?;

    let ids = tables[0].ids.clone();
    let align = |other: &[String], what: &str| -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> =
            other.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if let Some(extra) = other.iter().find(|id| !ids.contains(id)) {
            return Err(Error::Alignment(format!("{what} has unknown id {extra:?}")));
        }
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Alignment(format!("{what} is missing id {id:?}")))
            })
            .collect()
    };

    let mut modalities = Vec::with_capacity(tables.len());
    for (path, table) in modality_paths.iter().zip(&tables) {
        let what = path.display().to_string();
        let order = align(&table.ids, &what)?;
        let mut features = Tensor::zeros(ids.len(), table.columns.len());
        for (row, &src) in order.iter().enumerate() {
            features.values_mut()[row * table.columns.len()..(row + 1) * table.columns.len()]
                .copy_from_slice(table.values.row(src));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| what.clone());
        modalities.push(Modality {
            name,
            columns: table.columns.clone(),
            features,
        });
    }

    let label_ids: Vec<String> = labels.iter().map(|(id, _)| id.clone()).collect();
    let order = align(&label_ids, &labels_path.display().to_string())?;
    let y = order.iter().map(|&i| labels[i].1).collect();
    Dataset::new(ids, modalities, y, class_names.to_vec())
}

pub fn write_feature_csv<W: Write>(out: W, ids: &[String], modality: &Modality) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(modality.columns.iter().cloned());
    w.write_record(&header)?;
    for (v, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(modality.features.row(v).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_label_csv<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "label"])?;
    for (id, &y) in dataset.ids.iter().zip(&dataset.labels) {
        w.write_record([id.as_str(), dataset.class_names[y].as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Per-column min-max scaling into `[0, 1]`; constant columns become 0.5.
pub fn normalize_features(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for c in 0..x.cols() {
        let col = x.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (r, v) in col.into_iter().enumerate() {
            let scaled = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            out.set(r, c, scaled);
        }
    }
    out
}

pub fn normalize(dataset: &Dataset) -> Dataset {
    let modalities = dataset
        .modalities
        .iter()
        .map(|m| Modality {
            features: normalize_features(&m.features),
            ..m.clone()
        })
        .collect();
    Dataset {
        modalities,
        ..dataset.clone()
    }
}

/// Fused vertex features plus the concatenation of one kNN hypergraph per modality.
pub fn fuse_and_build(dataset: &Dataset, k: usize) -> Result<(Tensor, Hypergraph)> {
    let graphs = dataset
        .modalities
        .iter()
        .map(|m| build_knn_hyperedges(&m.features, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset.fused_features(), concat_hypergraphs(&graphs)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    /// Feature width of each modality; its length is the modality count.
    pub dims: Vec<usize>,
    pub classes: usize,
    /// Scale of class centroids, in units of `within_std` per coordinate.
    pub separation: f64,
    pub within_std: f64,
    /// Fraction of vertices whose label is redrawn uniformly over all classes.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 240,
            dims: vec![16, 16, 8],
            classes: 3,
            separation: 2.0,
            within_std: 1.0,
            label_noise: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n < 2 * self.classes {
            return Err(Error::Parameter(format!(
                "need n >= 2 * classes, got n = {} with {} classes",
                self.n, self.classes
            )));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid modality dims {:?}", self.dims)));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::Parameter(format!("separation must be >= 0, got {}", self.separation)));
        }
        if !(self.within_std.is_finite() && self.within_std > 0.0) {
            return Err(Error::Parameter(format!("within_std must be > 0, got {}", self.within_std)));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Parameter(format!(
                "label_noise must lie in [0, 1], got {}",
                self.label_noise
            )));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Gaussian class clusters per modality, optional label noise, then min-max
/// normalisation. Classes are assigned round-robin so they stay balanced.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let true_labels: Vec<usize> = (0..n).map(|v| v % cfg.classes).collect();

    let mut modalities = Vec::with_capacity(cfg.dims.len());
    for (i, &d) in cfg.dims.iter().enumerate() {
        let centroids: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| {
                (0..d)
                    .map(|_| cfg.separation * cfg.within_std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut features = Tensor::zeros(n, d);
        for (v, &y) in true_labels.iter().enumerate() {
            for (c, &mu) in centroids[y].iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                features.set(v, c, mu + cfg.within_std * noise);
            }
        }
        modalities.push(Modality {
            name: format!("modality{i}"),
            columns: (0..d).map(|c| format!("m{i}_f{c}")).collect(),
            features,
        });
    }

    let mut labels = true_labels;
    let flips = (cfg.label_noise * n as f64).round() as usize;
    for v in sample(&mut rng, n, flips.min(n)) {
        labels[v] = rng.random_range(0..cfg.classes);
    }

    let class_names = if cfg.classes == DEFAULT_CLASS_NAMES.len() {
        default_class_names()
    } else {
        (0..cfg.classes).map(|c| format!("class{c}")).collect()
    };
    let ids = (0..n).map(|v| format!("v{v:04}")).collect();
    let raw = Dataset::new(ids, modalities, labels, class_names)?;
    Ok(normalize(&raw))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn normalize_examples() {
        let x = Tensor::from_rows(&[[0.0, 7.0, 0.0], [5.0, 7.0, 0.25], [10.0, 7.0, 1.0]]).unwrap();
        let y = normalize_features(&x);
        assert_eq!(y.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(y.column(1), vec![0.5; 3]);
        for (a, b) in y.column(2).iter().zip(x.column(2)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn feature_table_parses() {
        let t = parse_feature_table("id,a,b\nx,1,2\ny, 3 ,4.5\n").unwrap();
        assert_eq!(t.ids, vec!["x", "y"]);
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.values.row(1), &[3.0, 4.5]);
    }

    #[test]
    fn feature_table_errors() {
        assert!(parse_feature_table("name,a\nx,1\n").is_err());
        assert!(parse_feature_table("id,a\nx,1\nx,2\n").is_err());
        assert!(parse_feature_table("id,a\nx,abc\n").is_err());
        assert!(parse_feature_table("id,a\nx,NaN\n").is_err());
        assert!(parse_feature_table("id,a\nx,1,2\n").is_err());
        assert!(parse_feature_table("id\nx\n").is_err());
    }

    #[test]
    fn label_table_accepts_names_and_indices() {
        let names = default_class_names();
        let l = parse_label_table("id,label\na,NC\nb,2\nc,MCI\n", &names).unwrap();
        assert_eq!(l, vec![("a".into(), 0), ("b".into(), 2), ("c".into(), 1)]);
        assert!(matches!(
            parse_label_table("id,label\na,EMCI\n", &names),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            parse_label_table("id,label\na,3\n", &names),
            Err(Error::Label(_))
        ));
        assert!(parse_label_table("id,class\na,NC\n", &names).is_err());
    }

    #[test]
    fn synthetic_defaults_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.num_vertices(), 240);
        assert_eq!(a.modalities.len(), 3);
        assert_eq!(a.fused_features().cols(), 40);
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        let b = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
        for m in &a.modalities {
            assert!(m.features.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn label_noise_count() {
        let clean = SynthConfig {
            label_noise: 0.0,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&clean).unwrap();
        assert!(d.labels.iter().enumerate().all(|(v, &y)| y == v % 3));
        // redrawn labels may land on the original class, so at most 36 differ
        let noisy = generate_synthetic(&SynthConfig::default()).unwrap();
        let changed = noisy.labels.iter().enumerate().filter(|(v, &y)| y != v % 3).count();
        assert!(changed > 0 && changed <= 36, "changed = {changed}");
    }

    #[test]
    fn synth_config_validation() {
        let bad = SynthConfig {
            n: 4,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        assert!(SynthConfig::from_json(br#"{"label_noise": 2.0}"#).is_err());
        assert!(SynthConfig::from_json(br#"{"bogus": 1}"#).is_err());
        let parsed = SynthConfig::from_json(br#"{"n": 30, "seed": 4}"#).unwrap();
        assert_eq!(parsed.dims, vec![16, 16, 8]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_order_preserving(
            vals in proptest::collection::vec(-100.0f64..100.0, 2..30)
        ) {
            let n = vals.len();
            let x = Tensor::new(n, 1, vals.clone()).unwrap();
            let once = normalize_features(&x);
            let twice = normalize_features(&once);
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
            for i in 0..n {
                for j in 0..n {
                    if vals[i] < vals[j] {
                        prop_assert!(once.get(i, 0) <= once.get(j, 0));
                    }
                }
            }
        }
    }
}
