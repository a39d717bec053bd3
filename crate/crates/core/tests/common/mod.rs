//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hgib::autodiff::{Adam, AdamConfig, Tape, Tensor, Var, CLAMP_EPS};
use hgib::data::Dataset;
use hgib::hypergraph::Hypergraph;
use hgib::model::{init_params, Propagation};
use hgib::seeds::{substream_seed, Stream};
use hgib::trainer::{model_dims, prepare, TrainConfig};
use hgib::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(rows, cols, values).unwrap()
}

/// Random hyperedges over `n` vertices; every vertex lies in at least one edge.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Vec<Vec<usize>> {
    let mut edges: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let mut e = vec![v];
        for _ in 0..rng.random_range(0..3) {
            e.push(rng.random_range(0..n));
        }
        edges.push(e);
    }
    for _ in 0..extra {
        let size = rng.random_range(1..=n.min(5));
        edges.push((0..size).map(|_| rng.random_range(0..n)).collect());
    }
    for e in &mut edges {
        e.sort_unstable();
        e.dedup();
    }
    edges
}

pub fn random_hypergraph(rng: &mut ChaCha8Rng, n: usize) -> Hypergraph {
    let extra = rng.random_range(0..n);
    Hypergraph::from_edges(n, random_edges(rng, n, extra)).unwrap()
}

type Dense = Vec<Vec<f64>>;

fn dense(t: &Tensor) -> Dense {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|c| a.iter().map(|r| r[c]).collect()).collect()
}

fn diag_inv(d: &[f64]) -> Dense {
    let n = d.len();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 / d[i] } else { 0.0 }).collect())
        .collect()
}

/// `ReLU(D_v⁻¹ H D_e⁻¹ Hᵀ X Θ)` evaluated literally with dense matrices.
pub fn dense_conv_oracle(n: usize, edges: &[Vec<usize>], x: &Tensor, theta: &Tensor) -> Dense {
    let mut h = vec![vec![0.0; edges.len()]; n];
    for (e, members) in edges.iter().enumerate() {
        for &v in members {
            h[v][e] = 1.0;
        }
    }
    let dv: Vec<f64> = h.iter().map(|r| r.iter().sum()).collect();
    let de: Vec<f64> = (0..edges.len()).map(|e| h.iter().map(|r| r[e]).sum()).collect();
    let ht = transpose(&h);
    let m = mm(&mm(&mm(&diag_inv(&dv), &h), &diag_inv(&de)), &ht);
    let out = mm(&mm(&m, &dense(x)), &dense(theta));
    out.into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Mann-Whitney statistic by explicit pair counting; ties count one half.
pub fn pair_count_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positives[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between tape gradients and central differences
/// (step 1e-5) over every entry of every parameter.
pub fn fd_max_rel_err<F>(params: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone()).unwrap()).collect();
        let loss = build(&mut tape, &vars).unwrap();
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(params);
    tape.backward(loss).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let analytic = tape.grad(vars[pi]).unwrap().clone();
        for idx in 0..p.len() {
            let shifted = |delta: f64| {
                let mut ps = params.to_vec();
                ps[pi].values_mut()[idx] += delta;
                let (t, _, l) = eval(&ps);
                t.scalar(l)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.values()[idx], numeric));
        }
    }
    worst
}

/// Plain cross-entropy HGNN+ training written directly against the tape,
/// mirroring the trainer's split, initialisation, schedule and optimiser.
pub fn plain_ce_trace(dataset: &Dataset, cfg: &TrainConfig) -> Vec<f64> {
    let (x, g, split) = prepare(dataset, cfg).unwrap();
    let classes = dataset.num_classes();
    let mut model = init_params(
        &model_dims(x.cols(), classes, cfg),
        substream_seed(cfg.seed, Stream::Init),
    )
    .unwrap();
    let prop = Propagation::new(&g).unwrap();
    let n = x.rows();
    let mut target = Tensor::zeros(n, classes);
    let mut count = 0usize;
    for v in 0..n {
        if split.labeled[v] {
            target.set(v, dataset.labels[v], 1.0);
            count += 1;
        }
    }
    let mut adam = Adam::new(model.params(), AdamConfig::default());
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let em = tape.constant(prop.edge_mean.clone()).unwrap();
        let vm = tape.constant(prop.vertex_mean.clone()).unwrap();
        let t = tape.constant(target.clone()).unwrap();
        let mut params = Vec::new();
        let mut h = xv;
        let mut logits = xv;
        for layer in model.layers() {
            let theta = tape.param(layer.theta.clone()).unwrap();
            let proj = tape.param(layer.projector.clone()).unwrap();
            params.push(theta);
            params.push(proj);
            let fe = tape.matmul(em, h).unwrap();
            let agg = tape.matmul(vm, fe).unwrap();
            let lin = tape.matmul(agg, theta).unwrap();
            h = tape.relu(lin).unwrap();
            logits = tape.matmul(h, proj).unwrap();
        }
        let p = tape.row_softmax(logits).unwrap();
        let p = tape.clamp(p, CLAMP_EPS, 1.0 - CLAMP_EPS).unwrap();
        let lp = tape.log(p).unwrap();
        let picked = tape.mul(lp, t).unwrap();
        let s = tape.sum(picked).unwrap();
        let loss = tape.scale(s, -1.0 / count as f64).unwrap();
        trace.push(tape.scalar(loss));
        tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = params.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();
        let refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut model.params_mut(), &refs, cfg.lr_at(epoch)).unwrap();
    }
    trace
}
