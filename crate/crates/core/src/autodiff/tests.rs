use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, values).unwrap()
}

type Graph = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Central finite differences of `f` around `inputs`, step 1e-5.
fn numeric_grads(f: &Graph, inputs: &[Tensor]) -> Vec<Tensor> {
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };
    let h = 1e-5;
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut g = Tensor::zeros(x.rows(), x.cols());
            for j in 0..x.len() {
                let mut plus = inputs.to_vec();
                plus[i].values_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].values_mut()[j] -= h;
                g.values_mut()[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            g
        })
        .collect()
}

fn analytic_grads(f: &Graph, inputs: &[Tensor]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    vars.iter().map(|&v| tape.grad(v).unwrap().clone()).collect()
}

fn assert_grad_check(f: &Graph, inputs: &[Tensor]) {
    let a = analytic_grads(f, inputs);
    let n = numeric_grads(f, inputs);
    for (ga, gn) in a.iter().zip(&n) {
        for (x, y) in ga.values().iter().zip(gn.values()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-3);
            assert!(rel <= 1e-4, "analytic {x} vs numeric {y} (rel {rel})");
        }
    }
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::identity(2)).unwrap();
    let b = tape.constant(t(&[&[3.0, 4.0], &[5.0, 6.0]])).unwrap();
    let out = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(out), &t(&[&[3.0, 4.0], &[5.0, 6.0]]));

    let a = tape.constant(t(&[&[1.0, 2.0]])).unwrap();
    let c = tape.constant(t(&[&[3.0], &[4.0]])).unwrap();
    let out = tape.matmul(a, c).unwrap();
    assert_eq!(tape.scalar(out), 11.0);

    let z = tape.constant(Tensor::scalar(0.0)).unwrap();
    let s = tape.constant(Tensor::scalar(7.0)).unwrap();
    let out = tape.matmul(z, s).unwrap();
    assert_eq!(tape.scalar(out), 0.0);
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3)).unwrap();
    let b = tape.constant(Tensor::zeros(2, 3)).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[-1.0, 2.0]])).unwrap();
    let r = tape.relu(a).unwrap();
    assert_eq!(tape.value(r).values(), &[0.0, 2.0]);

    let z = tape.constant(Tensor::scalar(0.0)).unwrap();
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.scalar(s), 0.5);

    let e = tape.constant(Tensor::scalar(std::f64::consts::E)).unwrap();
    let l = tape.log(e).unwrap();
    assert!((tape.scalar(l) - 1.0).abs() < 1e-15);
}

#[test]
fn binary_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(1, 2)).unwrap();
    let b = tape.constant(Tensor::zeros(2, 1)).unwrap();
    assert!(tape.add(a, b).is_err());
    assert!(tape.sub(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
}

#[test]
fn non_finite_is_an_error() {
    let mut tape = Tape::new();
    assert!(matches!(
        tape.constant(Tensor::scalar(f64::NAN)),
        Err(Error::NonFinite(_))
    ));
    let big = tape.constant(Tensor::scalar(f64::MAX)).unwrap();
    assert!(matches!(tape.scale(big, 10.0), Err(Error::NonFinite("scale"))));
}

#[test]
fn log_clamps_non_positive_inputs() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[0.0, -5.0]])).unwrap();
    let l = tape.log(a).unwrap();
    let expected = CLAMP_EPS.ln();
    assert!(tape.value(l).values().iter().all(|&v| v == expected));
}

#[test]
fn reduce_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let s = tape.sum(a).unwrap();
    assert_eq!(tape.scalar(s), 10.0);

    let u = tape.constant(t(&[&[0.0, 0.0]])).unwrap();
    let sm = tape.row_softmax(u).unwrap();
    assert_eq!(tape.value(sm).values(), &[0.5, 0.5]);

    let one = tape.constant(Tensor::scalar(4.0)).unwrap();
    let m = tape.mean(one).unwrap();
    assert_eq!(tape.scalar(m), 4.0);

    let empty = tape.constant(Tensor::zeros(0, 3)).unwrap();
    assert!(tape.sum(empty).is_err());
    assert!(tape.mean(empty).is_err());
    assert!(tape.row_softmax(empty).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let a = tape.constant(random_tensor(&mut rng, 8, 5, -30.0, 30.0)).unwrap();
    let s = tape.row_softmax(a).unwrap();
    for r in 0..8 {
        let total: f64 = tape.value(s).row(r).iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn backward_linear_and_square() {
    let mut tape = Tape::new();
    let theta = tape.param(t(&[&[1.0, -2.0], &[0.5, 3.0]])).unwrap();
    let loss = tape.sum(theta).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(theta).unwrap().values(), &[1.0; 4]);

    let mut tape = Tape::new();
    let theta = tape.param(Tensor::scalar(3.0)).unwrap();
    let sq = tape.mul(theta, theta).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(theta).unwrap().values(), &[6.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(2, 2)).unwrap();
    assert!(matches!(tape.backward(a), Err(Error::Dimension { .. })));
}

#[test]
fn repeated_backward_accumulates_until_reset() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(2.0)).unwrap();
    let s = tape.scale(a, 3.0).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().values(), &[6.0]);
    tape.zero_grad();
    assert_eq!(tape.grad(a).unwrap().values(), &[0.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0)).unwrap();
    let p = tape.param(Tensor::scalar(5.0)).unwrap();
    let prod = tape.mul(c, p).unwrap();
    tape.backward(prod).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(p).unwrap().values(), &[2.0]);
}

#[test]
fn fan_out_accumulates() {
    // d/dx (x·x + 3x) = 2x + 3
    let f: &Graph = &|tape, v| {
        let sq = tape.mul(v[0], v[0])?;
        let lin = tape.scale(v[0], 3.0)?;
        let s = tape.add(sq, lin)?;
        tape.sum(s)
    };
    let g = analytic_grads(f, &[Tensor::scalar(1.5)]);
    assert_eq!(g[0].values(), &[6.0]);
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = random_tensor(&mut rng, 4, 2, -1.0, 1.0);
    let c = random_tensor(&mut rng, 3, 4, 0.1, 2.0);

    let cases: Vec<(&str, Box<Graph>, Vec<Tensor>)> = vec![
        ("matmul", Box::new(|t, v| { let m = t.matmul(v[0], v[1])?; t.sum(m) }), vec![a.clone(), b.clone()]),
        ("add", Box::new(|t, v| { let m = t.add(v[0], v[1])?; let q = t.mul(m, m)?; t.sum(q) }), vec![a.clone(), c.clone()]),
        ("sub", Box::new(|t, v| { let m = t.sub(v[0], v[1])?; let q = t.mul(m, m)?; t.mean(q) }), vec![a.clone(), c.clone()]),
        ("relu", Box::new(|t, v| { let r = t.relu(v[0])?; let q = t.mul(r, r)?; t.sum(q) }), vec![a.clone()]),
        ("sigmoid", Box::new(|t, v| { let s = t.sigmoid(v[0])?; t.sum(s) }), vec![a.clone()]),
        ("log", Box::new(|t, v| { let l = t.log(v[0])?; t.sum(l) }), vec![c.clone()]),
        ("neg", Box::new(|t, v| { let n = t.neg(v[0])?; let q = t.mul(n, v[0])?; t.sum(q) }), vec![a.clone()]),
        ("powf", Box::new(|t, v| { let p = t.powf(v[0], 0.5)?; t.sum(p) }), vec![c.clone()]),
        ("add_scalar", Box::new(|t, v| { let p = t.add_scalar(v[0], 2.0)?; let l = t.log(p)?; t.sum(l) }), vec![c.clone()]),
        ("row_sum", Box::new(|t, v| { let r = t.row_sum(v[0])?; let q = t.mul(r, r)?; t.sum(q) }), vec![a.clone()]),
        ("row_softmax", Box::new(|t, v| { let s = t.row_softmax(v[0])?; let w = t.mul(s, v[1])?; t.sum(w) }), vec![a.clone(), c.clone()]),
        ("clamp", Box::new(|t, v| { let s = t.clamp(v[0], -0.5, 0.5)?; let q = t.mul(s, s)?; t.sum(q) }), vec![a.clone()]),
    ];
    for (name, f, inputs) in cases {
        eprintln!("checking {name}");
        assert_grad_check(f.as_ref(), &inputs);
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_tensor(&mut rng, 5, 5, -1.0, 1.0);
    let f: &Graph = &|t, v| {
        let m = t.matmul(v[0], v[0])?;
        let s = t.row_softmax(m)?;
        let l = t.log(s)?;
        t.mean(l)
    };
    let g1 = analytic_grads(f, std::slice::from_ref(&a));
    let g2 = analytic_grads(f, &[a]);
    assert_eq!(g1, g2);
}

proptest! {
    #[test]
    fn relu_is_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
        let n = vals.len();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(1, n, vals).unwrap()).unwrap();
        let r1 = tape.relu(a).unwrap();
        let r2 = tape.relu(r1).unwrap();
        prop_assert_eq!(tape.value(r1), tape.value(r2));
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(x in -1e6f64..1e6) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(x)).unwrap();
        let s = tape.sigmoid(a).unwrap();
        let v = tape.scalar(s);
        prop_assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, 3, 3, -1.0, 1.0);
        let f = |t: &mut Tape, v: Var| -> Result<Var> { let s = t.sigmoid(v)?; t.sum(s) };
        let g = |t: &mut Tape, v: Var| -> Result<Var> { let m = t.matmul(v, v)?; t.mean(m) };

        let mut tape = Tape::new();
        let v = tape.param(x.clone()).unwrap();
        let fv = f(&mut tape, v).unwrap();
        let gv = g(&mut tape, v).unwrap();
        let both = tape.add(fv, gv).unwrap();
        tape.backward(both).unwrap();
        let combined = tape.grad(v).unwrap().clone();

        let mut tape = Tape::new();
        let v = tape.param(x).unwrap();
        let fv = f(&mut tape, v).unwrap();
        tape.backward(fv).unwrap();
        let gv = g(&mut tape, v).unwrap();
        tape.backward(gv).unwrap();
        let separate = tape.grad(v).unwrap();

        for (a, b) in combined.values().iter().zip(separate.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
