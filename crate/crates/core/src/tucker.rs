//! Tucker tensors, HOSVD truncation and structured sampling.

use crate::error::{Error, Result};
use crate::exec;
use crate::matkernels::{self, full_thin_svd, numerical_rank, qr_thin};
use crate::tenalg::{DenseTensor, Matrix, Shape};

/// Multilinear rank, one entry per mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TuckerRank(pub Vec<usize>);

impl TuckerRank {
    pub fn new(r: Vec<usize>) -> Self {
        TuckerRank(r)
    }

    pub fn uniform(d: usize, r: usize) -> Self {
        TuckerRank(vec![r; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    /// Entrywise `self <= other`.
    pub fn le(&self, other: &TuckerRank) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Checks `1 <= r_k <= n_k` for every mode.
    pub fn validate_for(&self, shape: &Shape) -> Result<()> {
        if self.order() != shape.order() {
            return Err(Error::InvalidRank(format!("rank {:?} for order {}", self.0, shape.order())));
        }
        for (k, (&r, &n)) in self.0.iter().zip(shape.dims()).enumerate() {
            if r == 0 || r > n {
                return Err(Error::InvalidRank(format!("r_{k} = {r} outside 1..={n}")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for TuckerRank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

/// `core x_0 U_0 x_1 ... x_{d-1} U_{d-1}` with orthonormal factors.
///
/// A representation may be rank deficient (the core unfoldings need not have
/// full row rank); [`TuckerTensor::rank_revealed`] removes such directions.
/// The zero tensor is stored with rank (1, ..., 1) and a zero core.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    core: DenseTensor,
    factors: Vec<Matrix>,
}

pub const ORTHO_TOL: f64 = 1e-8;

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        check_parts(&core, &factors)?;
        for (k, u) in factors.iter().enumerate() {
            let e = (u.transpose() * u - Matrix::identity(u.ncols(), u.ncols())).norm();
            if e > ORTHO_TOL {
                return Err(Error::InvalidParameter(format!("factor {k} not orthonormal (defect {e:e})")));
            }
        }
        Ok(TuckerTensor { core, factors })
    }

    pub(crate) fn from_parts(core: DenseTensor, factors: Vec<Matrix>) -> Self {
        debug_assert!(check_parts(&core, &factors).is_ok());
        TuckerTensor { core, factors }
    }

    pub fn zeros(shape: &Shape) -> Self {
        let d = shape.order();
        let core = DenseTensor::zeros(Shape::new(vec![1; d]).expect("order checked by shape"));
        let factors = shape
            .dims()
            .iter()
            .map(|&n| {
                let mut u = Matrix::zeros(n, 1);
                u[(0, 0)] = 1.0;
                u
            })
            .collect();
        TuckerTensor { core, factors }
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &Matrix {
        &self.factors[k]
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.factors.iter().map(|u| u.nrows()).collect()).expect("valid factors")
    }

    /// Stored rank (core dimensions).
    pub fn rank(&self) -> TuckerRank {
        TuckerRank(self.core.dims().to_vec())
    }

    pub fn fro_norm(&self) -> f64 {
        self.core.fro_norm()
    }

    pub fn to_dense(&self) -> DenseTensor {
        self.core.all_mode_product(&self.factors).expect("consistent factors")
    }

    /// Singular values of the mode-k core unfolding, descending.
    pub fn core_singular_values(&self, k: usize) -> Result<Vec<f64>> {
        Ok(full_thin_svd(&self.core.unfold(k)?)?.s)
    }

    /// Numerical multilinear rank from the core unfoldings.
    pub fn exact_rank(&self, tol: f64) -> TuckerRank {
        TuckerRank(
            (0..self.order())
                .map(|k| numerical_rank(&self.core_singular_values(k).expect("valid mode"), tol))
                .collect(),
        )
    }

    /// `min_k sigma_min(G_(k)) / sigma_max(G_(k))`, with missing singular
    /// values counted as zero.
    pub fn min_core_sigma_ratio(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 0..self.order() {
            let s = self.core_singular_values(k).expect("valid mode");
            let rk = self.core.dims()[k];
            let ratio = if s.is_empty() || s[0] == 0.0 || s.len() < rk { 0.0 } else { s[rk - 1] / s[0] };
            worst = worst.min(ratio);
        }
        worst
    }

    /// Drops core directions with singular value at most `tol * sigma_1`.
    /// Modes already at full numerical rank are left untouched, so an
    /// exact-rank input is returned unchanged. The zero tensor is returned as
    /// stored.
    pub fn rank_revealed(&self, tol: f64) -> TuckerTensor {
        if self.core.fro_norm() == 0.0 {
            return self.clone();
        }
        let mut core = self.core.clone();
        let mut factors = self.factors.clone();
        for k in 0..self.order() {
            let svd = full_thin_svd(&core.unfold(k).expect("valid mode")).expect("finite core");
            let rk = numerical_rank(&svd.s, tol).max(1);
            if rk == core.dims()[k] {
                continue;
            }
            let q = svd.u.columns(0, rk).into_owned();
            core = core.mode_product(k, &q.transpose()).expect("valid mode");
            factors[k] = &factors[k] * q;
        }
        TuckerTensor { core, factors }
    }

    /// Value at a 0-based multi-index.
    pub fn entry(&self, idx: &[usize]) -> f64 {
        let rows: Vec<Vec<f64>> =
            self.factors.iter().zip(idx).map(|(u, &i)| u.row(i).iter().copied().collect()).collect();
        let mut out = 0.0;
        let mut kr = Vec::new();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        crate::tenalg::kron_rows_into(&refs, &mut kr);
        for (g, w) in self.core.data().iter().zip(&kr) {
            out += g * w;
        }
        out
    }

    pub fn as_low_rank(&self) -> LowRankTensor {
        LowRankTensor { core: self.core.clone(), factors: self.factors.clone() }
    }
}

fn check_parts(core: &DenseTensor, factors: &[Matrix]) -> Result<()> {
    if core.order() != factors.len() {
        return Err(Error::DimensionMismatch(format!(
            "core order {} with {} factors",
            core.order(),
            factors.len()
        )));
    }
    for (k, u) in factors.iter().enumerate() {
        if u.ncols() != core.dims()[k] || u.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "factor {k} is {}x{} for core dimension {}",
                u.nrows(),
                u.ncols(),
                core.dims()[k]
            )));
        }
    }
    Ok(())
}

/// Tucker-format tensor whose factors need not be orthonormal. Used for
/// search directions and intermediate sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankTensor {
    pub core: DenseTensor,
    pub factors: Vec<Matrix>,
}

impl LowRankTensor {
    pub fn to_dense(&self) -> DenseTensor {
        self.core.all_mode_product(&self.factors).expect("consistent factors")
    }

    /// Same tensor with orthonormal factors; every factor `W = QR` is
    /// replaced by `Q` and `R` is absorbed into the core.
    pub fn orthonormalized(&self) -> TuckerTensor {
        let mut core = self.core.clone();
        let mut factors = Vec::with_capacity(self.factors.len());
        for (k, w) in self.factors.iter().enumerate() {
            let (q, r) = qr_thin(w);
            core = core.mode_product(k, &r).expect("valid mode");
            factors.push(q);
        }
        TuckerTensor::from_parts(core, factors)
    }
}

/// Numerical multilinear rank of a dense tensor. Zero modes report 0.
pub fn exact_tucker_rank(a: &DenseTensor, tol: f64) -> Result<TuckerRank> {
    let mut r = Vec::with_capacity(a.order());
    for k in 0..a.order() {
        r.push(numerical_rank(&full_thin_svd(&a.unfold(k)?)?.s, tol));
    }
    Ok(TuckerRank(r))
}

fn check_rank_order(d: usize, r: &TuckerRank) -> Result<()> {
    if r.order() != d || r.dims().contains(&0) {
        return Err(Error::InvalidRank(format!("rank {r} for order {d}")));
    }
    Ok(())
}

/// Sequential HOSVD truncation in ascending mode order: mode k keeps the
/// leading `r_k` left singular vectors of the current (already truncated)
/// tensor's unfolding. Ties keep the first directions returned by the SVD.
pub fn hosvd(a: &DenseTensor, r: &TuckerRank) -> Result<TuckerTensor> {
    check_rank_order(a.order(), r)?;
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut t = a.clone();
    let mut factors = Vec::with_capacity(a.order());
    for k in 0..a.order() {
        let svd = full_thin_svd(&t.unfold(k)?)?;
        let rk = r.dims()[k].min(svd.s.len());
        let u = svd.u.columns(0, rk).into_owned();
        t = t.mode_product(k, &u.transpose())?;
        factors.push(u);
    }
    Ok(TuckerTensor::from_parts(t, factors))
}

/// HOSVD truncation of a Tucker tensor, computed on the core only.
pub fn hosvd_tucker(x: &TuckerTensor, r: &TuckerRank) -> Result<TuckerTensor> {
    let inner = hosvd(x.core(), r)?;
    let factors = x.factors().iter().zip(inner.factors()).map(|(u, v)| u * v).collect();
    Ok(TuckerTensor::from_parts(inner.core().clone(), factors))
}

/// Same as [`hosvd_tucker`] but for a form with non-orthonormal factors.
pub fn hosvd_low_rank(x: &LowRankTensor, r: &TuckerRank) -> Result<TuckerTensor> {
    hosvd_tucker(&x.orthonormalized(), r)
}

/// Builds a tensor from dense data at its numerical rank.
pub fn from_dense(a: &DenseTensor, tol: f64) -> Result<TuckerTensor> {
    let r = exact_tucker_rank(a, tol)?;
    if r.dims().contains(&0) {
        return Ok(TuckerTensor::zeros(a.shape()));
    }
    hosvd(a, &r)
}

/// Adds `src * scale` into `dst` at the given per-mode offsets.
pub(crate) fn embed_add(dst: &mut DenseTensor, src: &DenseTensor, offsets: &[usize], scale: f64) {
    let sdims = src.dims().to_vec();
    let dshape = dst.shape().clone();
    let mut idx = vec![0usize; sdims.len()];
    let data = dst.data_mut();
    for &v in src.data() {
        let mut lin = 0;
        let mut stride = 1;
        for ((i, o), n) in idx.iter().zip(offsets).zip(dshape.dims()) {
            lin += (i + o) * stride;
            stride *= n;
        }
        data[lin] += scale * v;
        for (i, &n) in idx.iter_mut().zip(&sdims) {
            *i += 1;
            if *i < n {
                break;
            }
            *i = 0;
        }
    }
}

/// Values of a Tucker-format tensor at flat 0-based multi-indices
/// (`d` consecutive entries per sample).
pub fn sample_low_rank(core: &DenseTensor, factors: &[Matrix], idx: &[u32]) -> Vec<f64> {
    let d = factors.len();
    let m = idx.len() / d;
    // table[i0 * rest + j] = (G x_0 U_0)(i0, j)
    let g0 = core.mode_product(0, &factors[0]).expect("consistent factors");
    let m0 = g0.unfold(0).expect("mode 0");
    let rest = m0.ncols();
    let table: Vec<f64> = m0.transpose().as_slice().to_vec();
    let dims: Vec<usize> = core.dims().to_vec();
    let mut out = vec![0.0; m];
    exec::fill_chunks(exec::current(), &mut out, exec::CHUNK, |off, slice| {
        let mut buf = vec![0.0; rest];
        let mut next = vec![0.0; rest];
        for (t, o) in slice.iter_mut().enumerate() {
            let s = &idx[(off + t) * d..(off + t + 1) * d];
            let i0 = s[0] as usize;
            buf.copy_from_slice(&table[i0 * rest..(i0 + 1) * rest]);
            let mut len = rest;
            for k in 1..d {
                let rk = dims[k];
                let u = &factors[k];
                let ik = s[k] as usize;
                let nlen = len / rk;
                for (q, nx) in next[..nlen].iter_mut().enumerate() {
                    let mut acc = 0.0;
                    let base = q * rk;
                    for j in 0..rk {
                        acc += buf[base + j] * u[(ik, j)];
                    }
                    *nx = acc;
                }
                std::mem::swap(&mut buf, &mut next);
                len = nlen;
            }
            debug_assert_eq!(len, 1);
            *o = buf[0];
        }
    });
    out
}

/// `min(r, n)` leading left singular vectors padded to exactly `r` columns
/// with a deterministic complement.
pub(crate) fn leading_left_padded(m: &Matrix, r: usize, against: Option<&Matrix>) -> Result<Matrix> {
    let svd = matkernels::thin_svd(m, matkernels::DEFAULT_RANK_TOL)?;
    let take = svd.rank().min(r);
    let mut found = svd.u.columns(0, take).into_owned();
    if let Some(a) = against {
        // When `m` is rounding noise left by projecting out `a`, its singular
        // vectors can lean back into span(a); keep only the ones that survive
        // a second projection and pad the rest from the exact complement.
        let again = matkernels::project_out(a, &found);
        let keep: Vec<_> = (0..take)
            .filter(|&j| again.column(j).norm() > 0.5)
            .map(|j| again.column(j).into_owned())
            .collect();
        found = if keep.is_empty() {
            Matrix::zeros(m.nrows(), 0)
        } else {
            qr_thin(&Matrix::from_columns(&keep)).0
        };
    }
    let take = found.ncols();
    if take == r {
        return Ok(found);
    }
    let mut basis = found.clone();
    if let Some(a) = against {
        basis = concat_cols(&[a, &found]);
    }
    let extra = matkernels::complement_basis(&basis, r - take)?;
    Ok(concat_cols(&[&found, &extra]))
}

pub fn concat_cols(ms: &[&Matrix]) -> Matrix {
    let rows = ms.iter().map(|m| m.nrows()).max().unwrap_or(0);
    let cols: usize = ms.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for m in ms {
        out.view_mut((0, c), (m.nrows(), m.ncols())).copy_from(*m);
        c += m.ncols();
    }
    out
}
