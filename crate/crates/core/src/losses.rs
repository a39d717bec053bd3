//! Cross-entropy, focal loss, the information-bottleneck surrogate, and their
//! weighted total.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, CLAMP_EPS};
use crate::error::{Error, Result};
use crate::model::LayerOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the focal term.
    pub mu: f64,
    /// Weight of the averaged per-layer bottleneck loss.
    pub xi: f64,
    /// Compression weight inside each per-layer bottleneck loss.
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            xi: 10.0,
            beta: 1.0,
            alpha: 2.0,
            gamma: 0.5,
        }
    }
}

impl LossConfig {
    /// Plain cross-entropy training (no focal or bottleneck terms).
    pub fn cross_entropy_only() -> Self {
        Self {
            mu: 0.0,
            xi: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu", self.mu),
            ("xi", self.xi),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Labelled-vertex selection shared by every supervised term.
#[derive(Debug, Clone)]
pub struct Supervision {
    /// n×C, one at `(v, label_v)` for each masked vertex.
    one_hot: Tensor,
    /// n×1, one for each masked vertex.
    mask: Tensor,
    count: usize,
}

impl Supervision {
    pub fn new(labels: &[usize], mask: &[bool], classes: usize) -> Result<Self> {
        if labels.len() != mask.len() {
            return Err(Error::dim(
                "supervision",
                format!("{} labels, {} mask entries", labels.len(), mask.len()),
            ));
        }
        let n = labels.len();
        let mut one_hot = Tensor::zeros(n, classes);
        let mut m = Tensor::zeros(n, 1);
        let mut count = 0;
        for (v, (&y, &on)) in labels.iter().zip(mask).enumerate() {
            if !on {
                continue;
            }
            if y >= classes {
                return Err(Error::Label(format!(
                    "vertex {v} has label {y} with only {classes} classes"
                )));
            }
            one_hot.set(v, y, 1.0);
            m.set(v, 0, 1.0);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            one_hot,
            mask: m,
            count,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_rows(&self, op: &'static str, t: &Tensor) -> Result<()> {
        if t.rows() != self.one_hot.rows() {
            return Err(Error::dim(
                op,
                format!("{} rows for {} vertices", t.rows(), self.one_hot.rows()),
            ));
        }
        Ok(())
    }
}

/// Clamped `log` of row-softmax probabilities.
fn log_probs(tape: &mut Tape, logits: Var) -> Result<Var> {
    let probs = tape.row_softmax(logits)?;
    let clamped = tape.clamp(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    tape.log(clamped)
}

/// Mean over masked vertices of `−log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, sup: &Supervision) -> Result<Var> {
    sup.check_rows("cross_entropy", tape.value(logits))?;
    if tape.value(logits).cols() != sup.one_hot.cols() {
        return Err(Error::dim(
            "cross_entropy",
            format!(
                "{} logit columns for {} classes",
                tape.value(logits).cols(),
                sup.one_hot.cols()
            ),
        ));
    }
    let logp = log_probs(tape, logits)?;
    let one_hot = tape.constant(sup.one_hot.clone())?;
    let picked = tape.mul(logp, one_hot)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / sup.count as f64)
}

/// n×1 column of each vertex's true-class probability (zero for unmasked vertices).
pub fn true_class_probs(tape: &mut Tape, logits: Var, sup: &Supervision) -> Result<Var> {
    sup.check_rows("true_class_probs", tape.value(logits))?;
    let probs = tape.row_softmax(logits)?;
    let one_hot = tape.constant(sup.one_hot.clone())?;
    let picked = tape.mul(probs, one_hot)?;
    tape.row_sum(picked)
}

/// Mean over masked vertices of `−α (1 − P_v)^γ log P_v` for an n×1 column `probs`.
pub fn focal_loss(tape: &mut Tape, probs: Var, alpha: f64, gamma: f64, sup: &Supervision) -> Result<Var> {
    sup.check_rows("focal_loss", tape.value(probs))?;
    let p = tape.clamp(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    let neg_p = tape.neg(p)?;
    let one_minus = tape.add_scalar(neg_p, 1.0)?;
    let weight = tape.powf(one_minus, gamma)?;
    let log_p = tape.log(p)?;
    let term = tape.mul(weight, log_p)?;
    let mask = tape.constant(sup.mask.clone())?;
    let masked = tape.mul(term, mask)?;
    let total = tape.sum(masked)?;
    tape.scale(total, -alpha / sup.count as f64)
}

/// `KL(Bernoulli(p) ‖ Bernoulli(0.5))` with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn kl_bernoulli_half(p: f64) -> f64 {
    let p = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln()
}

/// Mean over all entries of `KL(Bernoulli(sigmoid(z)) ‖ Bernoulli(0.5))`.
pub fn compression_term(tape: &mut Tape, z: Var) -> Result<Var> {
    let p = tape.sigmoid(z)?;
    let two_p = tape.scale(p, 2.0)?;
    let log_two_p = tape.log(two_p)?;
    let pos = tape.mul(p, log_two_p)?;
    let neg_p = tape.neg(p)?;
    let q = tape.add_scalar(neg_p, 1.0)?;
    let two_q = tape.scale(q, 2.0)?;
    let log_two_q = tape.log(two_q)?;
    let neg = tape.mul(q, log_two_q)?;
    let kl = tape.add(pos, neg)?;
    tape.mean(kl)
}

/// `(1/L) Σ_l [CE(Z^l W_l) + β · compression(Z^l)]`. The CE part uses the
/// supervision mask; compression covers every vertex.
pub fn hgib_loss(tape: &mut Tape, per_layer: &[LayerOutput], sup: &Supervision, beta: f64) -> Result<Var> {
    if per_layer.is_empty() {
        return Err(Error::Parameter("bottleneck loss needs at least one layer".into()));
    }
    let mut acc: Option<Var> = None;
    for layer in per_layer {
        let ce = cross_entropy(tape, layer.logits, sup)?;
        let kl = compression_term(tape, layer.z)?;
        let weighted = tape.scale(kl, beta)?;
        let layer_loss = tape.add(ce, weighted)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, layer_loss)?,
            None => layer_loss,
        });
    }
    let sum = acc.expect("non-empty");
    tape.scale(sum, 1.0 / per_layer.len() as f64)
}

/// Handles to each term of the total objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub cross_entropy: Var,
    pub focal: Var,
    pub hgib: Var,
}

/// `CE + μ·focal + ξ·hgib` on the final logits and every layer's output.
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    per_layer: &[LayerOutput],
    sup: &Supervision,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let ce = cross_entropy(tape, logits, sup)?;
    let p_true = true_class_probs(tape, logits, sup)?;
    let focal = focal_loss(tape, p_true, cfg.alpha, cfg.gamma, sup)?;
    let hgib = hgib_loss(tape, per_layer, sup, cfg.beta)?;
    let focal_w = tape.scale(focal, cfg.mu)?;
    let hgib_w = tape.scale(hgib, cfg.xi)?;
    let partial = tape.add(ce, focal_w)?;
    let total = tape.add(partial, hgib_w)?;
    Ok(LossTerms {
        total,
        cross_entropy: ce,
        focal,
        hgib,
    })
}
