use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim(
                "tensor",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, values.len()),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.values[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// Columns of all inputs side by side; every input must have the same row count.
    pub fn hconcat(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if let Some(bad) = parts.iter().find(|t| t.rows != rows) {
            return Err(Error::dim(
                "hconcat",
                format!("row counts {rows} and {} differ", bad.rows),
            ));
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                values.extend_from_slice(t.row(r));
            }
        }
        Ok(Tensor { rows, cols, values })
    }

    /// Column range `[start, end)` as a new tensor.
    pub fn column_slice(&self, start: usize, end: usize) -> Tensor {
        let cols = end - start;
        let mut values = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            values.extend_from_slice(&self.row(r)[start..end]);
        }
        Tensor {
            rows: self.rows,
            cols,
            values,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(matmul_nn(self, other))
    }
}

// The kernels skip zero entries of the left operand so that multiplying by an
// incidence-derived matrix costs time proportional to its non-zeros.

/// `a · b`
pub(crate) fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a.values[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.values[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Tensor {
        rows: m,
        cols: n,
        values: out,
    }
}

/// `aᵀ · g` where `a` is m×p and `g` is m×n.
pub(crate) fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, p, n) = (a.rows, a.cols, g.cols);
    let mut out = vec![0.0; p * n];
    for i in 0..m {
        let g_row = &g.values[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a.values[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[k * n..(k + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
    Tensor {
        rows: p,
        cols: n,
        values: out,
    }
}

/// `g · bᵀ` where `g` is m×n and `b` is p×n.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n, p) = (g.rows, g.cols, b.rows);
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let g_row = &g.values[i * n..(i + 1) * n];
        for k in 0..p {
            let b_row = &b.values[k * n..(k + 1) * n];
            out[i * p + k] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        rows: m,
        cols: p,
        values: out,
    }
}
