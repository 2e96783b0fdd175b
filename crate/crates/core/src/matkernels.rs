//! Matrix kernels: SVD, QR, complements, pseudo-inverses and the matrix
//! tangent-cone projection.
//!
//! SVD and QR are delegated to nalgebra; everything built on top of them is
//! deterministic for a given input.

use crate::error::{Error, Result};
use crate::tenalg::Matrix;

pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Thin SVD `a = u * diag(s) * v^T` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the first `r` triplets.
    pub fn truncated(&self, r: usize) -> Svd {
        let r = r.min(self.s.len());
        Svd {
            u: self.u.columns(0, r).into_owned(),
            s: self.s[..r].to_vec(),
            v: self.v.columns(0, r).into_owned(),
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

fn check_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

type Triplets = (Matrix, Matrix, nalgebra::DVector<f64>);

/// nalgebra's SVD at its default tolerance, rejected when the
/// factorization misses the input by more than `1e-10` relative.
fn raw_svd(a: &Matrix) -> Option<Triplets> {
    let svd = a.clone().try_svd(true, true, 5.0 * f64::EPSILON, 0)?;
    let u = svd.u?;
    let vt = svd.v_t?;
    let sv = svd.singular_values;
    let mut us = u.clone();
    for (j, s) in sv.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    let scale = a.norm();
    if (us * &vt - a).norm() > 1e-10 * scale {
        return None;
    }
    Some((u, vt, sv))
}

/// One-sided Jacobi SVD. Slower than the bidiagonal path but it does not
/// misconverge on rank-deficient inputs, so it serves as the last resort.
fn jacobi_svd(a: &Matrix) -> Triplets {
    let wide = a.nrows() < a.ncols();
    let mut b = if wide { a.transpose() } else { a.clone() };
    let n = b.ncols();
    let mut v = Matrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(q).norm_squared();
                let gamma = b.column(p).dot(&b.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut b, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv = nalgebra::DVector::from_fn(n, |j, _| b.column(j).norm());
    let smax = sv.max();
    let mut u = Matrix::zeros(b.nrows(), n);
    let mut filled = Vec::new();
    for j in 0..n {
        if sv[j] > f64::EPSILON * smax * n as f64 {
            u.set_column(j, &(b.column(j) / sv[j]));
            filled.push(j);
        }
    }
    // zero columns get any orthonormal completion
    let mut e = 0;
    for j in 0..n {
        if filled.contains(&j) {
            continue;
        }
        loop {
            let mut w = nalgebra::DVector::zeros(b.nrows());
            w[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for &i in &filled {
                    let d = u.column(i).dot(&w);
                    w -= u.column(i) * d;
                }
            }
            let nw = w.norm();
            if nw > 0.5 {
                u.set_column(j, &(w / nw));
                filled.push(j);
                break;
            }
        }
    }
    if wide {
        (v, u.transpose(), sv)
    } else {
        (u, v.transpose(), sv)
    }
}

/// All `min(m, n)` singular triplets, sorted descending.
pub fn full_thin_svd(a: &Matrix) -> Result<Svd> {
    check_finite(a)?;
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: Matrix::zeros(m, 0), s: vec![], v: Matrix::zeros(n, 0) });
    }
    let (u, vt, sv) = match raw_svd(a) {
        Some(t) => t,
        // Retry on the transpose when the first factorization does not
        // reproduce its input (seen on rank-one wide matrices).
        None => match raw_svd(&a.transpose()) {
            Some((u, vt, sv)) => (vt.transpose(), u.transpose(), sv),
            None => jacobi_svd(a),
        },
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap().then(i.cmp(&j)));
    let mut uo = Matrix::zeros(m, k);
    let mut vo = Matrix::zeros(n, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        uo.set_column(dst, &u.column(src));
        vo.set_column(dst, &vt.row(src).transpose());
        s.push(sv[src]);
    }
    Ok(Svd { u: uo, s, v: vo })
}

/// Thin SVD truncated to the numerical rank `#{s_i > tol * s_1}`.
/// A zero matrix gives rank 0.
pub fn thin_svd(a: &Matrix, tol: f64) -> Result<Svd> {
    let full = full_thin_svd(a)?;
    let r = numerical_rank(&full.s, tol);
    Ok(full.truncated(r))
}

pub fn numerical_rank(s: &[f64], tol: f64) -> usize {
    match s.first() {
        Some(&s1) if s1 > 0.0 => s.iter().take_while(|&&x| x > tol * s1).count(),
        _ => 0,
    }
}

/// Best approximation of rank at most `r` in the Frobenius norm.
pub fn truncate_rank(a: &Matrix, r: usize) -> Result<Matrix> {
    let svd = thin_svd(a, DEFAULT_RANK_TOL)?;
    if svd.rank() <= r {
        return Ok(a.clone());
    }
    Ok(svd.truncated(r).reconstruct())
}

/// Householder QR `a = q * r` with a nonnegative diagonal in `r`. No rank
/// check; `q` has orthonormal columns even when `a` is rank deficient.
pub fn qr_thin(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (Matrix::zeros(m, m.min(n)), Matrix::zeros(m.min(n), n));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    check_finite(a)?;
    let (q, r) = qr_thin(a);
    if a.ncols() > a.nrows() {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let diag: Vec<f64> = (0..r.nrows()).map(|j| r[(j, j)].abs()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if dmax == 0.0 || dmin <= DEFAULT_RANK_TOL * dmax {
        let condition = if dmin == 0.0 { f64::INFINITY } else { dmax / dmin };
        return Err(Error::RankDeficient { condition });
    }
    Ok(q)
}

/// `m - u (u^T m)`: removes the component in the span of orthonormal `u`.
pub fn project_out(u: &Matrix, m: &Matrix) -> Matrix {
    if u.ncols() == 0 {
        return m.clone();
    }
    m - u * (u.transpose() * m)
}

/// `count` orthonormal columns orthogonal to the orthonormal columns of `u`.
///
/// Deterministic: coordinate vectors are added greedily by largest residual
/// after projecting out the current basis.
pub fn complement_basis(u: &Matrix, count: usize) -> Result<Matrix> {
    let (n, r) = u.shape();
    if count + r > n {
        return Err(Error::ComplementTooLarge { requested: count, available: n - r.min(n) });
    }
    let mut basis: Vec<Vec<f64>> = (0..r).map(|j| u.column(j).iter().copied().collect()).collect();
    let mut res: Vec<f64> =
        (0..n).map(|i| 1.0 - (0..r).map(|j| u[(i, j)] * u[(i, j)]).sum::<f64>()).collect();
    let mut out = Matrix::zeros(n, count);
    for c in 0..count {
        let mut best = 0;
        for i in 1..n {
            if res[i] > res[best] {
                best = i;
            }
        }
        let mut v = vec![0.0; n];
        v[best] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        for i in 0..n {
            res[i] -= v[i] * v[i];
            out[(i, c)] = v[i];
        }
        res[best] = f64::NEG_INFINITY;
        basis.push(v);
    }
    Ok(out)
}

/// Right pseudo-inverse `g^T (g g^T)^{-1}` of a full-row-rank matrix,
/// computed from its SVD.
pub fn pinv_unfolding(g: &Matrix) -> Result<Matrix> {
    let svd = full_thin_svd(g)?;
    let rows = g.nrows();
    let s1 = svd.s.first().copied().unwrap_or(0.0);
    let smin = if svd.s.len() < rows { 0.0 } else { svd.s[rows - 1] };
    if rows == 0 || s1 == 0.0 || svd.s.len() < rows || smin <= DEFAULT_RANK_TOL * s1 {
        let condition = if smin == 0.0 { f64::INFINITY } else { s1 / smin };
        return Err(Error::RankDeficient { condition });
    }
    let mut v = svd.v.clone();
    for (j, s) in svd.s.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(v * svd.u.transpose())
}

/// Metric projection onto the tangent cone of the rank-`r` matrix variety at
/// `x`.
pub fn proj_matrix_tangent_cone(x: &Matrix, a: &Matrix, r: usize) -> Result<Matrix> {
    if x.shape() != a.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", x.shape(), a.shape())));
    }
    check_finite(a)?;
    let svd = thin_svd(x, DEFAULT_RANK_TOL)?;
    let rb = svd.rank();
    if rb > r {
        return Err(Error::InvalidRank(format!("point has rank {rb} > bound {r}")));
    }
    let (u, v) = (&svd.u, &svd.v);
    let pua = u * (u.transpose() * a);
    let apv = (a * v) * v.transpose();
    let puapv = u * (u.transpose() * a * v) * v.transpose();
    let mut out = &pua + &apv - &puapv;
    if r > rb {
        let perp = project_out(v, &project_out(u, a).transpose()).transpose();
        out += truncate_rank(&perp, r - rb)?;
    }
    Ok(out)
}

/// Leading `k` eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn leading_eigvecs(sym: &Matrix, k: usize) -> (Matrix, Vec<f64>) {
    let n = sym.nrows();
    let k = k.min(n);
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap().then(i.cmp(&j)));
    let mut out = Matrix::zeros(n, k);
    let mut vals = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        out.set_column(dst, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    (out, vals)
}
