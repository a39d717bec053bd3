use super::tensor::{matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied to log, power and division inputs.
pub const CLAMP_EPS: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves that require it.
    grad: Option<Tensor>,
    op: Op,
}

/// Append-only record of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every operation's inputs precede it and a
/// reverse sweep over the node list is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Leaves with `requires_grad` accumulate gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        let grad = requires_grad.then(|| Tensor::zeros(value.rows(), value.cols()));
        self.nodes.push(Node {
            value,
            requires_grad,
            grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Drops every node recorded after the first `len`, so constants can be
    /// shared across iterations. Gradients of the kept nodes are reset.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.zero_grad();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.values_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul", &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add", &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub", &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul", &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu", &[a])
    }

    /// Logistic function; outputs are clamped to `[1e-12, 1 - 1e-12]`.
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self
            .value(a)
            .map(|x| sigmoid(x).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS));
        self.push(out, Op::Sigmoid(a), "sigmoid", &[a])
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(CLAMP_EPS).ln());
        self.push(out, Op::Log(a), "log", &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a), "neg", &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), "scale", &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + offset);
        self.push(out, Op::AddScalar(a), "add_scalar", &[a])
    }

    /// `max(x, 1e-12)^exponent`.
    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(CLAMP_EPS).powf(exponent));
        self.push(out, Op::Pow(a, exponent), "powf", &[a])
    }

    /// Gradient passes through where `lo <= x <= hi` and is zero elsewhere.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp", &[a])
    }

    fn non_empty(&self, op: &'static str, a: Var) -> Result<()> {
        if self.value(a).is_empty() {
            return Err(Error::dim(op, "empty tensor"));
        }
        Ok(())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.non_empty("sum", a)?;
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum", &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.non_empty("mean", a)?;
        let t = self.value(a);
        let m = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), "mean", &[a])
    }

    /// Sums each row into an n×1 column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.non_empty("row_sum", a)?;
        let t = self.value(a);
        let sums = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, sums)?;
        self.push(out, Op::RowSum(a), "row_sum", &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.non_empty("row_softmax", a)?;
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / z);
            }
        }
        self.push(out, Op::RowSoftmax(a), "row_softmax", &[a])
    }

    /// Accumulates `d(loss)/d(leaf)` into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::dim("backward", format!("loss must be 1x1, got {shape:?}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            for (input, contribution) in self.local_grads(i, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Some(acc), Some(g)) = (node.grad.as_mut(), g) {
                acc.add_assign(&g);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its inputs that requires one.
    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        let mut emit = |v: Var, make: &dyn Fn() -> Tensor| {
            if wants(v) {
                out.push((v, make()));
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                emit(a, &|| matmul_nt(g, val(b)));
                emit(b, &|| matmul_tn(val(a), g));
            }
            Op::Add(a, b) => {
                emit(a, &|| g.clone());
                emit(b, &|| g.clone());
            }
            Op::Sub(a, b) => {
                emit(a, &|| g.clone());
                emit(b, &|| g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                emit(a, &|| g.zip_map(val(b), |gi, bi| gi * bi));
                emit(b, &|| g.zip_map(val(a), |gi, ai| gi * ai));
            }
            Op::Relu(a) => {
                emit(a, &|| g.zip_map(val(a), |gi, x| if x > 0.0 { gi } else { 0.0 }))
            }
            Op::Sigmoid(a) => emit(a, &|| {
                g.zip_map(val(a), |gi, x| {
                    let s = sigmoid(x);
                    gi * s * (1.0 - s)
                })
            }),
            Op::Log(a) => emit(a, &|| {
                g.zip_map(val(a), |gi, x| if x >= CLAMP_EPS { gi / x } else { 0.0 })
            }),
            Op::Neg(a) => emit(a, &|| g.map(|x| -x)),
            Op::Scale(a, f) => emit(a, &|| g.map(|x| x * f)),
            Op::AddScalar(a) => emit(a, &|| g.clone()),
            Op::Pow(a, p) => emit(a, &|| {
                g.zip_map(val(a), |gi, x| {
                    if x >= CLAMP_EPS {
                        gi * p * x.powf(p - 1.0)
                    } else {
                        0.0
                    }
                })
            }),
            Op::Clamp(a, lo, hi) => emit(a, &|| {
                g.zip_map(val(a), |gi, x| if x >= lo && x <= hi { gi } else { 0.0 })
            }),
            Op::Sum(a) => emit(a, &|| {
                let t = val(a);
                Tensor::filled(t.rows(), t.cols(), g.values()[0])
            }),
            Op::Mean(a) => emit(a, &|| {
                let t = val(a);
                Tensor::filled(t.rows(), t.cols(), g.values()[0] / t.len() as f64)
            }),
            Op::RowSum(a) => emit(a, &|| {
                let t = val(a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for c in 0..t.cols() {
                        out.set(r, c, g.get(r, 0));
                    }
                }
                out
            }),
            Op::RowSoftmax(a) => emit(a, &|| {
                let s = &node.value;
                let mut out = Tensor::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let dot: f64 = s.row(r).iter().zip(g.row(r)).map(|(x, y)| x * y).sum();
                    for c in 0..s.cols() {
                        out.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                out
            }),
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
