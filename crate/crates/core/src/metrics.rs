//! One-vs-rest AUC and macro-averaged predictive values.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn check_binary_inputs(scores: &[f64], positives: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positives.len() {
        return Err(Error::dim(
            "auc",
            format!("{} scores, {} labels", scores.len(), positives.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("AUC scores contain NaN".into()));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney estimate of ROC AUC: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half. Computed from mid-ranks.
pub fn auc_binary(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary_inputs(scores, positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| positives[k]).count();
        positive_rank_sum += mid_rank * tied_pos as f64;
        i = j + 1;
    }
    let u = positive_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC points `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`,
/// one point per distinct score threshold.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_binary_inputs(scores, positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

pub fn trapezoidal_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_per_class: Vec<f64>,
    pub auc_average: f64,
    /// Percent; `None` where the class was never predicted.
    pub ppv_per_class: Vec<Option<f64>>,
    /// Percent; `None` where every vertex was predicted as the class.
    pub npv_per_class: Vec<Option<f64>>,
    pub ppv_average: f64,
    pub npv_average: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn csv_header(classes: usize) -> String {
        let mut cols: Vec<String> = (0..classes).map(|c| format!("auc_{c}")).collect();
        cols.extend(["auc_average", "ppv_average", "npv_average"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.auc_per_class.iter().map(|a| a.to_string()).collect();
        cols.extend([self.auc_average, self.ppv_average, self.npv_average].map(|v| v.to_string()));
        cols.join(",")
    }
}

fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest metrics over the masked vertices; predictions are the row argmax.
pub fn evaluate(probs: &Tensor, labels: &[usize], mask: &[bool]) -> Result<MetricsReport> {
    let classes = probs.cols();
    if probs.rows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::dim(
            "evaluate",
            format!(
                "{} probability rows, {} labels, {} mask entries",
                probs.rows(),
                labels.len(),
                mask.len()
            ),
        ));
    }
    let selected: Vec<usize> = (0..labels.len()).filter(|&v| mask[v]).collect();
    if selected.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&v) = selected.iter().find(|&&v| labels[v] >= classes) {
        return Err(Error::Label(format!(
            "vertex {v} has label {} with only {classes} classes",
            labels[v]
        )));
    }
    for c in 0..classes {
        if !selected.iter().any(|&v| labels[v] == c) {
            return Err(Error::UndefinedMetric(format!("class {c} absent from evaluated vertices")));
        }
    }

    let mut auc_per_class = Vec::with_capacity(classes);
    let positives_of = |c: usize| selected.iter().map(|&v| labels[v] == c).collect::<Vec<_>>();
    for c in 0..classes {
        let scores: Vec<f64> = selected.iter().map(|&v| probs.get(v, c)).collect();
        auc_per_class.push(auc_binary(&scores, &positives_of(c))?);
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    for &v in &selected {
        confusion[labels[v]][argmax(probs.row(v))] += 1;
    }

    let total = selected.len();
    let mut warnings = Vec::new();
    let mut ppv_per_class = Vec::with_capacity(classes);
    let mut npv_per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let fp = predicted_c - tp;
        let fn_ = actual_c - tp;
        let tn = total - tp - fp - fn_;
        let ppv = (tp + fp > 0).then(|| 100.0 * tp as f64 / (tp + fp) as f64);
        let npv = (tn + fn_ > 0).then(|| 100.0 * tn as f64 / (tn + fn_) as f64);
        if ppv.is_none() {
            warnings.push(format!("class {c}: PPV undefined (never predicted), excluded from average"));
        }
        if npv.is_none() {
            warnings.push(format!("class {c}: NPV undefined (always predicted), excluded from average"));
        }
        ppv_per_class.push(ppv);
        npv_per_class.push(npv);
    }

    let auc_average = auc_per_class.iter().sum::<f64>() / classes as f64;
    let ppv_average = macro_mean(&ppv_per_class)
        .ok_or_else(|| Error::UndefinedMetric("PPV undefined for every class".into()))?;
    let npv_average = macro_mean(&npv_per_class)
        .ok_or_else(|| Error::UndefinedMetric("NPV undefined for every class".into()))?;

    Ok(MetricsReport {
        auc_per_class,
        auc_average,
        ppv_per_class,
        npv_per_class,
        ppv_average,
        npv_average,
        confusion,
        evaluated: total,
        warnings,
    })
}
