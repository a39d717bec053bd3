//! Spatial hypergraph convolution stack with a projection head per layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 2;

/// Layer widths: `input → widths[0] → … → widths[L-1]`, each followed by a
/// `widths[l] × classes` projector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub widths: Vec<usize>,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, widths: Vec<usize>, classes: usize) -> Self {
        Self {
            input,
            widths,
            classes,
        }
    }

    /// `layers` hidden layers of equal `width`.
    pub fn uniform(input: usize, width: usize, layers: usize, classes: usize) -> Self {
        Self::new(input, vec![width; layers], classes)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Parameter("model needs at least one layer".into()));
        }
        if self.input == 0 || self.classes == 0 || self.widths.contains(&0) {
            return Err(Error::Parameter(format!("zero-sized dimension in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `d_in × d_out` convolution weight.
    pub theta: Tensor,
    /// `d_out × C` projector.
    pub projector: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    layers: Vec<LayerParams>,
}

impl ModelState {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Parameter("model needs at least one layer".into()))?;
        let classes = first.projector.cols();
        for (l, layer) in layers.iter().enumerate() {
            if layer.projector.rows() != layer.theta.cols() || layer.projector.cols() != classes {
                return Err(Error::dim(
                    "model",
                    format!(
                        "layer {l}: theta {:?}, projector {:?}",
                        layer.theta.shape(),
                        layer.projector.shape()
                    ),
                ));
            }
            if l > 0 && layers[l - 1].theta.cols() != layer.theta.rows() {
                return Err(Error::dim(
                    "model",
                    format!(
                        "layer {l} expects width {}, previous layer outputs {}",
                        layer.theta.rows(),
                        layers[l - 1].theta.cols()
                    ),
                ));
            }
            if !(layer.theta.is_finite() && layer.projector.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].theta.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[0].projector.cols()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims::new(
            self.input_dim(),
            self.layers.iter().map(|l| l.theta.cols()).collect(),
            self.num_classes(),
        )
    }

    /// Parameters in a fixed order: θ₀, W₀, θ₁, W₁, …
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.theta, &l.projector])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.theta, &mut l.projector])
            .collect()
    }

    /// Records every parameter on `tape` as a gradient-tracking leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<ModelVars> {
        let layers = self
            .layers
            .iter()
            .map(|l| Ok((tape.param(l.theta.clone())?, tape.param(l.projector.clone())?)))
            .collect::<Result<_>>()?;
        Ok(ModelVars { layers })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, p)| {
                [
                    NamedTensor::new(format!("layer{l}.theta"), &p.theta),
                    NamedTensor::new(format!("layer{l}.projector"), &p.projector),
                ]
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tensors,
            train_config: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.tensors.is_empty() || !ckpt.tensors.len().is_multiple_of(2) {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, expected theta/projector pairs",
                ckpt.tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(ckpt.tensors.len() / 2);
        for (l, pair) in ckpt.tensors.chunks(2).enumerate() {
            let theta = pair[0].to_tensor(&format!("layer{l}.theta"))?;
            let projector = pair[1].to_tensor(&format!("layer{l}.projector"))?;
            layers.push(LayerParams { theta, projector });
        }
        Self::new(layers)
    }
}

/// Parameter handles on a tape, in layer order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<(Var, Var)>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(t, w)| [t, w]).collect()
    }
}

/// Glorot-uniform initialisation, deterministic for a given seed.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ModelState> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Tensor::new(fan_in, fan_out, values).expect("sized by construction")
    };
    let mut layers = Vec::with_capacity(dims.widths.len());
    let mut d_in = dims.input;
    for &d_out in &dims.widths {
        let theta = glorot(d_in, d_out);
        let projector = glorot(d_out, dims.classes);
        layers.push(LayerParams { theta, projector });
        d_in = d_out;
    }
    ModelState::new(layers)
}

/// Frozen mean-aggregation operators derived from a hypergraph.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `D_e⁻¹ Hᵀ`
    pub edge_mean: Tensor,
    /// `D_v⁻¹ H`
    pub vertex_mean: Tensor,
}

impl Propagation {
    pub fn new(g: &Hypergraph) -> Result<Self> {
        Ok(Self {
            edge_mean: g.vertex_to_edge_mean(),
            vertex_mean: g.edge_to_vertex_mean()?,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_mean.rows()
    }

    pub fn register(&self, tape: &mut Tape) -> Result<PropagationVars> {
        Ok(PropagationVars {
            edge_mean: tape.constant(self.edge_mean.clone())?,
            vertex_mean: tape.constant(self.vertex_mean.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationVars {
    pub edge_mean: Var,
    pub vertex_mean: Var,
}

/// One spatial convolution: vertex features are averaged into hyperedges,
/// hyperedge features are averaged back into vertices, then `ReLU(· Θ)`.
pub fn hgnnp_layer_forward(
    tape: &mut Tape,
    x: Var,
    prop: PropagationVars,
    theta: Var,
) -> Result<Var> {
    let n = tape.value(prop.vertex_mean).rows();
    if tape.value(x).rows() != n {
        return Err(Error::dim(
            "hgnnp_layer_forward",
            format!("{} feature rows for {n} vertices", tape.value(x).rows()),
        ));
    }
    if tape.value(theta).rows() != tape.value(x).cols() {
        return Err(Error::dim(
            "hgnnp_layer_forward",
            format!(
                "features have width {}, theta has {} rows",
                tape.value(x).cols(),
                tape.value(theta).rows()
            ),
        ));
    }
    let edge_features = tape.matmul(prop.edge_mean, x)?;
    let aggregated = tape.matmul(prop.vertex_mean, edge_features)?;
    let linear = tape.matmul(aggregated, theta)?;
    tape.relu(linear)
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// Post-activation representation `Z^l`.
    pub z: Var,
    /// `Z^l · W_l`.
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub per_layer: Vec<LayerOutput>,
}

pub fn forward(
    tape: &mut Tape,
    x: Var,
    prop: PropagationVars,
    params: &ModelVars,
) -> Result<ForwardOutput> {
    let mut h = x;
    let mut per_layer = Vec::with_capacity(params.layers.len());
    for &(theta, projector) in &params.layers {
        let z = hgnnp_layer_forward(tape, h, prop, theta)?;
        let logits = tape.matmul(z, projector)?;
        per_layer.push(LayerOutput { z, logits });
        h = z;
    }
    let last = per_layer
        .last()
        .ok_or_else(|| Error::Parameter("model has no layers".into()))?;
    Ok(ForwardOutput {
        logits: last.logits,
        per_layer,
    })
}

/// Class probabilities for every vertex without recording gradients.
pub fn predict_proba(state: &ModelState, x: &Tensor, prop: &Propagation) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let pv = prop.register(&mut tape)?;
    let layers = state
        .layers
        .iter()
        .map(|l| Ok((tape.constant(l.theta.clone())?, tape.constant(l.projector.clone())?)))
        .collect::<Result<_>>()?;
    let out = forward(&mut tape, xv, pv, &ModelVars { layers })?;
    let probs = tape.row_softmax(out.logits)?;
    Ok(tape.value(probs).clone())
}

pub const CHECKPOINT_FORMAT: &str = "hgib-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl NamedTensor {
    fn new(name: String, t: &Tensor) -> Self {
        Self {
            name,
            rows: t.rows(),
            cols: t.cols(),
            values: t.values().to_vec(),
        }
    }

    fn to_tensor(&self, expected_name: &str) -> Result<Tensor> {
        if self.name != expected_name {
            return Err(Error::Data(format!(
                "checkpoint tensor {:?} where {expected_name:?} was expected",
                self.name
            )));
        }
        let rows_cols = self.rows.checked_mul(self.cols);
        if rows_cols != Some(self.values.len()) {
            return Err(Error::Data(format!(
                "{}: {}x{} does not match {} values",
                self.name,
                self.rows,
                self.cols,
                self.values.len()
            )));
        }
        Tensor::new(self.rows, self.cols, self.values.clone())
    }
}

/// Serialized parameters: ordered `(name, rows, cols, values)` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
    /// Training configuration that produced the parameters, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }
}

/// Parses and validates a checkpoint document into model parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    ModelState::from_checkpoint(&Checkpoint::from_json(bytes)?)
}
