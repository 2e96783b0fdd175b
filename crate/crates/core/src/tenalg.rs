//! Dense tensor storage and multilinear kernels.
//!
//! Tensors are stored column-major: mode 0 varies fastest. Mode indices and
//! multi-indices are 0-based in this API; the text formats in
//! [`crate::objectives`] are 1-based.
//!
//! The mode-k unfolding places index `i_k` on the rows and orders the
//! remaining modes on the columns with the lowest mode varying fastest, so
//! `unfold(X x_k A, k) = A * unfold(X, k)`.

use crate::error::{Error, Result};
use crate::exec;

pub type Matrix = nalgebra::DMatrix<f64>;

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_ORDER {
            return Err(Error::InvalidShape(format!("order {} outside 1..={MAX_ORDER}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero dimension in {dims:?}")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, k: usize) -> usize {
        self.0[k]
    }

    /// Product of dimensions below `k` and above `k`.
    pub fn split(&self, k: usize) -> (usize, usize, usize) {
        let l = self.0[..k].iter().product();
        let r = self.0[k + 1..].iter().product();
        (l, self.0[k], r)
    }

    pub fn with_dim(&self, k: usize, n: usize) -> Result<Shape> {
        let mut d = self.0.clone();
        d[k] = n;
        Shape::new(d)
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        let mut stride = 1;
        for (i, n) in idx.iter().zip(&self.0) {
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        self.0
            .iter()
            .map(|&n| {
                let i = lin % n;
                lin /= n;
                i
            })
            .collect()
    }

    pub(crate) fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            Err(Error::ModeOutOfRange { mode: k, order: self.order() })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for shape {:?}",
                data.len(),
                shape.dims()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor { shape, data: vec![0.0; n] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n = shape.numel();
        let mut idx = vec![0usize; shape.order()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for (i, &d) in idx.iter_mut().zip(shape.dims()) {
                *i += 1;
                if *i < d {
                    break;
                }
                *i = 0;
            }
        }
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.shape.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let i = self.shape.linear_index(idx);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn unfold(&self, k: usize) -> Result<Matrix> {
        self.shape.check_mode(k)?;
        let (l, nk, r) = self.shape.split(k);
        let mut out = Vec::with_capacity(self.data.len());
        for rr in 0..r {
            for t in 0..l {
                let base = t + l * nk * rr;
                out.extend((0..nk).map(|i| self.data[base + l * i]));
            }
        }
        Ok(Matrix::from_vec(nk, l * r, out))
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, k: usize, shape: &Shape) -> Result<Self> {
        shape.check_mode(k)?;
        let (l, nk, r) = shape.split(k);
        if m.nrows() != nk || m.ncols() != l * r {
            return Err(Error::DimensionMismatch(format!(
                "cannot fold {}x{} into mode {k} of {:?}",
                m.nrows(),
                m.ncols(),
                shape.dims()
            )));
        }
        let mut data = vec![0.0; shape.numel()];
        for rr in 0..r {
            for t in 0..l {
                let col = m.column(t + l * rr);
                let base = t + l * nk * rr;
                for i in 0..nk {
                    data[base + l * i] = col[i];
                }
            }
        }
        Ok(DenseTensor { shape: shape.clone(), data })
    }

    /// `self x_k a`, replacing dimension `k` by `a.nrows()`.
    pub fn mode_product(&self, k: usize, a: &Matrix) -> Result<Self> {
        self.shape.check_mode(k)?;
        let (l, nk, r) = self.shape.split(k);
        if a.ncols() != nk {
            return Err(Error::DimensionMismatch(format!(
                "mode-{k} product with {}x{} matrix on dimension {nk}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = a.nrows();
        let shape = self.shape.with_dim(k, m)?;
        let mut out = vec![0.0; l * m * r];
        let src = &self.data;
        exec::fill_chunks(exec::current(), &mut out, l * m, |off, slab| {
            let rr = off / (l * m);
            for i in 0..nk {
                let s = &src[l * (i + nk * rr)..l * (i + nk * rr) + l];
                for mm in 0..m {
                    let c = a[(mm, i)];
                    if c == 0.0 {
                        continue;
                    }
                    let d = &mut slab[l * mm..l * mm + l];
                    for (dv, sv) in d.iter_mut().zip(s) {
                        *dv += c * sv;
                    }
                }
            }
        });
        Ok(DenseTensor { shape, data: out })
    }

    /// Applies several mode products in ascending mode order.
    pub fn multi_mode_product(&self, ops: &[(usize, &Matrix)]) -> Result<Self> {
        let mut ops: Vec<(usize, &Matrix)> = ops.to_vec();
        ops.sort_by_key(|(k, _)| *k);
        for w in ops.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::RepeatedMode(w[0].0));
            }
        }
        let mut t = self.clone();
        for (k, a) in ops {
            t = t.mode_product(k, a)?;
        }
        Ok(t)
    }

    /// `self x_k a_k` for every mode.
    pub fn all_mode_product(&self, mats: &[Matrix]) -> Result<Self> {
        if mats.len() != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "{} factors for order {}",
                mats.len(),
                self.order()
            )));
        }
        let ops: Vec<(usize, &Matrix)> = mats.iter().enumerate().collect();
        self.multi_mode_product(&ops)
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { expected: self.dims().to_vec(), got: other.dims().to_vec() });
        }
        Ok(())
    }
}

/// Outer product `v_0 o v_1 o ... o v_{d-1}`.
pub fn outer_rank1(vs: &[&[f64]]) -> Result<DenseTensor> {
    let shape = Shape::new(vs.iter().map(|v| v.len()).collect())?;
    Ok(DenseTensor::from_fn(shape, |idx| idx.iter().zip(vs).map(|(&i, v)| v[i]).product()))
}

/// Kronecker product with blocks `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ma, na) = a.shape();
    let (mb, nb) = b.shape();
    Matrix::from_fn(ma * mb, na * nb, |i, j| a[(i / mb, j / nb)] * b[(i % mb, j % nb)])
}

/// Kronecker product of row vectors with the first vector varying fastest,
/// matching the column order of unfoldings.
pub(crate) fn kron_rows_into(rows: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for row in rows {
        let prev = out.len();
        let mut next = Vec::with_capacity(prev * row.len());
        for &x in row.iter() {
            next.extend(out.iter().map(|&o| o * x));
        }
        *out = next;
    }
}
