//! Tangent spaces and tangent cones of the Tucker variety, the approximate
//! cone projection, its partial blocks and the HOSVD retraction.
//!
//! All operations take the base point `X = G x_k U_k` at its exact rank
//! (every core unfolding of full row rank) and an ambient tensor `A` given
//! through the [`Ambient`] accessor, which is either dense or a sparse
//! residual supported on a sample set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matkernels::{self, pinv_unfolding, project_out, qr_thin};
use crate::tenalg::{DenseTensor, Matrix, Shape};
use crate::tucker::{
    concat_cols, embed_add, hosvd, hosvd_tucker, leading_left_padded, LowRankTensor, TuckerRank, TuckerTensor,
};

/// Access to an ambient tensor through the contractions the geometry needs.
pub trait Ambient: Sync {
    fn shape(&self) -> &Shape;

    fn fro_norm(&self) -> f64;

    /// `(A x_{j != k} W_j^T)_(k)`; `factors[k]` is ignored.
    fn contract_all_but(&self, k: usize, factors: &[Matrix]) -> Result<Matrix>;

    /// `A x_0 W_0^T x_1 ... x_{d-1} W_{d-1}^T`.
    fn contract_all(&self, factors: &[Matrix]) -> Result<DenseTensor>;

    /// Up to `count` leading left singular vectors of the mode-k unfolding.
    fn leading_mode_subspace(&self, k: usize, count: usize) -> Result<Matrix>;

    fn to_dense(&self) -> DenseTensor;

    /// HOSVD truncation of `x + s A` to rank at most `r`.
    ///
    /// The default works on `span([U_k, Q_k])` per mode, where `Q_k` spans
    /// the leading `r_k` left singular vectors of `A_(k)`: the sum is
    /// projected onto that product space and the small core is truncated.
    fn retract_sum(&self, x: &TuckerTensor, s: f64, r: &TuckerRank) -> Result<TuckerTensor> {
        let d = x.order();
        let mut w = Vec::with_capacity(d);
        for k in 0..d {
            let q = self.leading_mode_subspace(k, r.dims()[k])?;
            let (qk, _) = qr_thin(&concat_cols(&[x.factor(k), &q]));
            w.push(qk);
        }
        let proj: Vec<Matrix> = w.iter().zip(x.factors()).map(|(wk, u)| wk.transpose() * u).collect();
        let mut core = x.core().all_mode_product(&proj)?;
        core.axpy(s, &self.contract_all(&w)?)?;
        let inner = hosvd(&core, r)?;
        let factors = w.iter().zip(inner.factors()).map(|(wk, v)| wk * v).collect();
        TuckerTensor::new(inner.core().clone(), factors)
    }
}

impl Ambient for DenseTensor {
    fn shape(&self) -> &Shape {
        DenseTensor::shape(self)
    }

    fn fro_norm(&self) -> f64 {
        DenseTensor::fro_norm(self)
    }

    fn contract_all_but(&self, k: usize, factors: &[Matrix]) -> Result<Matrix> {
        let mut t = self.clone();
        for (j, w) in factors.iter().enumerate() {
            if j != k {
                t = t.mode_product(j, &w.transpose())?;
            }
        }
        t.unfold(k)
    }

    fn contract_all(&self, factors: &[Matrix]) -> Result<DenseTensor> {
        let tr: Vec<Matrix> = factors.iter().map(|w| w.transpose()).collect();
        self.all_mode_product(&tr)
    }

    fn leading_mode_subspace(&self, k: usize, count: usize) -> Result<Matrix> {
        let svd = matkernels::thin_svd(&self.unfold(k)?, matkernels::DEFAULT_RANK_TOL)?;
        Ok(svd.truncated(count).u)
    }

    fn to_dense(&self) -> DenseTensor {
        self.clone()
    }

    /// Exact: densifies the sum.
    fn retract_sum(&self, x: &TuckerTensor, s: f64, r: &TuckerRank) -> Result<TuckerTensor> {
        let mut sum = x.to_dense();
        sum.axpy(s, self)?;
        hosvd(&sum, r)
    }
}

/// How the extra directions `U_{k,1}` of a cone element are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
pub enum ConeBasisChoice {
    /// Gaussian columns, projected and orthonormalized, from a seeded stream.
    RandomComplement(u64),
    /// Leading left singular vectors of `P_{U_k}^perp A_{!=k}`.
    #[default]
    LeadingSingular,
}

/// Element of the tangent space at `X` on the fixed-rank manifold:
/// `Gdot x_k U_k + sum_k G x_k Vdot_k x_{j != k} U_j` with `U_k^T Vdot_k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub core: DenseTensor,
    pub v: Vec<Matrix>,
}

impl TangentVector {
    /// The same vector as a cone element with bound equal to the base rank.
    pub fn into_cone(self, x: &TuckerTensor) -> TangentConeElement {
        TangentConeElement {
            bound: x.rank(),
            c: self.core,
            u1: x.factors().iter().map(|u| Matrix::zeros(u.nrows(), 0)).collect(),
            y: self.v,
        }
    }

    pub fn norm(&self, x: &TuckerTensor) -> f64 {
        let mut s = self.core.fro_norm().powi(2);
        for (k, v) in self.v.iter().enumerate() {
            s += (v * x.core().unfold(k).expect("mode")).norm_squared();
        }
        s.sqrt()
    }
}

/// Element of the tangent cone at `X` for the bound `r`:
/// `C x_k [U_k U1_k] + sum_k G x_k Y_k x_{j != k} U_j`, with `U1_k` of width
/// `r_k - rank_k` orthogonal to `U_k` and `Y_k` orthogonal to `[U_k U1_k]`.
/// The `d + 1` summands are mutually orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentConeElement {
    pub bound: TuckerRank,
    pub c: DenseTensor,
    pub u1: Vec<Matrix>,
    pub y: Vec<Matrix>,
}

impl TangentConeElement {
    pub fn zero(x: &TuckerTensor, bound: &TuckerRank) -> Self {
        let u1 = x
            .factors()
            .iter()
            .zip(bound.dims())
            .map(|(u, &r)| Matrix::zeros(u.nrows(), r - u.ncols()))
            .collect();
        TangentConeElement {
            bound: bound.clone(),
            c: DenseTensor::zeros(Shape::new(bound.dims().to_vec()).expect("positive bound")),
            u1,
            y: x.factors().iter().map(|u| Matrix::zeros(u.nrows(), u.ncols())).collect(),
        }
    }

    fn extended_factors(&self, x: &TuckerTensor) -> Vec<Matrix> {
        x.factors().iter().zip(&self.u1).map(|(u, u1)| concat_cols(&[u, u1])).collect()
    }

    /// Tucker form with factors `[U_k U1_k Y_k]` and a block core.
    pub fn low_rank_form(&self, x: &TuckerTensor) -> LowRankTensor {
        self.low_rank_form_plus(x, 0.0, 1.0)
    }

    /// Tucker form of `a * X + b * V` on the factors `[U_k U1_k Y_k]`.
    pub(crate) fn low_rank_form_plus(&self, x: &TuckerTensor, a: f64, b: f64) -> LowRankTensor {
        let d = x.order();
        let rb = x.rank();
        let widths: Vec<usize> = (0..d).map(|k| self.bound.dims()[k] + rb.dims()[k]).collect();
        let mut core = DenseTensor::zeros(Shape::new(widths).expect("positive widths"));
        let zeros = vec![0; d];
        if a != 0.0 {
            embed_add(&mut core, x.core(), &zeros, a);
        }
        embed_add(&mut core, &self.c, &zeros, b);
        for k in 0..d {
            let mut off = zeros.clone();
            off[k] = self.bound.dims()[k];
            embed_add(&mut core, x.core(), &off, b);
        }
        let factors = (0..d).map(|k| concat_cols(&[x.factor(k), &self.u1[k], &self.y[k]])).collect();
        LowRankTensor { core, factors }
    }

    pub fn to_dense(&self, x: &TuckerTensor) -> DenseTensor {
        self.low_rank_form(x).to_dense()
    }

    /// Norm from the orthogonal block structure.
    pub fn norm(&self, x: &TuckerTensor) -> f64 {
        let mut s = self.c.fro_norm().powi(2);
        for (k, y) in self.y.iter().enumerate() {
            if y.ncols() > 0 {
                s += (y * x.core().unfold(k).expect("mode")).norm_squared();
            }
        }
        s.sqrt()
    }

    /// `<A, V>` through the accessor.
    pub fn inner_ambient(&self, x: &TuckerTensor, a: &dyn Ambient) -> Result<f64> {
        let s = self.extended_factors(x);
        let mut acc = a.contract_all(&s)?.inner(&self.c)?;
        for k in 0..x.order() {
            if self.y[k].ncols() == 0 {
                continue;
            }
            let ank = a.contract_all_but(k, x.factors())?;
            let yg = &self.y[k] * x.core().unfold(k)?;
            acc += ank.dot(&yg);
        }
        Ok(acc)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.c.scale(s);
        out.y.iter_mut().for_each(|y| *y *= s);
        out
    }

    /// The `d + 1` orthogonal summands as separate elements.
    pub fn blocks(&self, x: &TuckerTensor) -> Vec<TangentConeElement> {
        let mut out = Vec::with_capacity(x.order() + 1);
        let mut b0 = self.clone();
        b0.y.iter_mut().for_each(|y| y.fill(0.0));
        out.push(b0);
        for k in 0..x.order() {
            let mut bk = TangentConeElement::zero(x, &self.bound);
            bk.u1 = self.u1.clone();
            bk.y[k] = self.y[k].clone();
            out.push(bk);
        }
        out
    }
}

fn check_bound(x: &TuckerTensor, r: &TuckerRank) -> Result<()> {
    r.validate_for(&x.shape())?;
    if !x.rank().le(r) {
        return Err(Error::InvalidRank(format!("point rank {} exceeds bound {r}", x.rank())));
    }
    if x.core().fro_norm() == 0.0 {
        return Err(Error::ZeroBasePoint);
    }
    Ok(())
}

/// Per-mode contractions shared by the projections.
struct Contractions {
    a_nk: Vec<Matrix>,
    pinv: Vec<Matrix>,
}

fn contractions(x: &TuckerTensor, a: &dyn Ambient) -> Result<Contractions> {
    if a.shape() != &x.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape().dims().to_vec(),
            got: a.shape().dims().to_vec(),
        });
    }
    let d = x.order();
    let mut a_nk = Vec::with_capacity(d);
    let mut pinv = Vec::with_capacity(d);
    for k in 0..d {
        pinv.push(pinv_unfolding(&x.core().unfold(k)?)?);
        a_nk.push(a.contract_all_but(k, x.factors())?);
    }
    Ok(Contractions { a_nk, pinv })
}

/// The matrix whose leading left singular vectors give `U1_k`.
///
/// For `d >= 3` this is `P_{U_k}^perp A_{!=k}`. For matrices it is
/// `P_U^perp A P_V^perp`, which makes the cone projection exact; the
/// `d >= 3` formula would give `P_U^perp A V` there instead.
fn basis_source(x: &TuckerTensor, a: &dyn Ambient, k: usize, a_nk: Option<&Matrix>) -> Result<Matrix> {
    let u = x.factor(k);
    if x.order() == 2 {
        let ak = a.to_dense().unfold(k)?;
        return Ok(project_out(u, &project_out(x.factor(1 - k), &ak.transpose()).transpose()));
    }
    match a_nk {
        Some(m) => Ok(project_out(u, m)),
        None => Ok(project_out(u, &a.contract_all_but(k, x.factors())?)),
    }
}

/// Orthonormal `n_k x count` block orthogonal to `u`, chosen per `choice`
/// from `perp` (see [`basis_source`]).
fn select_basis(
    u: &Matrix,
    perp: &Matrix,
    count: usize,
    choice: ConeBasisChoice,
    k: usize,
) -> Result<Matrix> {
    let n = u.nrows();
    if count == 0 {
        return Ok(Matrix::zeros(n, 0));
    }
    if u.ncols() + count > n {
        return Err(Error::ComplementTooLarge { requested: count, available: n - u.ncols() });
    }
    match choice {
        ConeBasisChoice::LeadingSingular => leading_left_padded(perp, count, Some(u)),
        ConeBasisChoice::RandomComplement(seed) => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
            let g = Matrix::from_fn(n, count, |_, _| StandardNormal.sample(&mut rng));
            let g = project_out(u, &project_out(u, &g));
            let (q, _) = qr_thin(&g);
            Ok(project_out(u, &q))
        }
    }
}

/// Tangent-space projection at `X` on the fixed-rank manifold.
pub fn proj_tangent_space(x: &TuckerTensor, a: &dyn Ambient) -> Result<TangentVector> {
    if x.core().fro_norm() == 0.0 {
        return Err(Error::ZeroBasePoint);
    }
    let c = contractions(x, a)?;
    let core = a.contract_all(x.factors())?;
    let v = (0..x.order()).map(|k| project_out(x.factor(k), &c.a_nk[k]) * &c.pinv[k]).collect();
    Ok(TangentVector { core, v })
}

/// Cone bases `U1_k` for the bound `r` at `X`.
pub fn select_cone_basis(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<Vec<Matrix>> {
    check_bound(x, r)?;
    let d = x.order();
    (0..d)
        .map(|k| {
            let u = x.factor(k);
            let count = r.dims()[k] - u.ncols();
            let perp = if count > 0 && choice == ConeBasisChoice::LeadingSingular {
                basis_source(x, a, k, None)?
            } else {
                Matrix::zeros(u.nrows(), 0)
            };
            select_basis(u, &perp, count, choice, k)
        })
        .collect()
}

fn approx_proj_parts(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<(Contractions, Vec<Matrix>, Vec<Matrix>, DenseTensor)> {
    check_bound(x, r)?;
    let c = contractions(x, a)?;
    let d = x.order();
    let mut u1 = Vec::with_capacity(d);
    let mut s = Vec::with_capacity(d);
    for k in 0..d {
        let u = x.factor(k);
        let count = r.dims()[k] - u.ncols();
        let perp = if count > 0 && choice == ConeBasisChoice::LeadingSingular {
            basis_source(x, a, k, Some(&c.a_nk[k]))?
        } else {
            Matrix::zeros(u.nrows(), 0)
        };
        let b = select_basis(u, &perp, count, choice, k)?;
        s.push(concat_cols(&[u, &b]));
        u1.push(b);
    }
    let core = a.contract_all(&s)?;
    Ok((c, u1, s, core))
}

/// Approximate projection onto the tangent cone at `X` for the bound `r`:
/// `C = A x_k S_k^T` and `Y_k = P_{S_k}^perp A_{!=k} G_(k)^+` with
/// `S_k = [U_k U1_k]`.
pub fn approx_proj_cone(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<TangentConeElement> {
    let (c, u1, s, core) = approx_proj_parts(x, a, r, choice)?;
    let y = (0..x.order()).map(|k| project_out(&s[k], &c.a_nk[k]) * &c.pinv[k]).collect();
    Ok(TangentConeElement { bound: r.clone(), c: core, u1, y })
}

/// The partial projections: index 0 is `A x_k P_{S_k}` (bound `r`), index
/// `k + 1` is `G x_k (P_{U_k}^perp A_{!=k} G_(k)^+) x_{j != k} U_j`, a
/// single-block element with bound equal to the base rank.
pub fn partial_projections(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<Vec<TangentConeElement>> {
    let (c, u1, _s, core) = approx_proj_parts(x, a, r, choice)?;
    let d = x.order();
    let mut out = Vec::with_capacity(d + 1);
    let mut p0 = TangentConeElement::zero(x, r);
    p0.c = core;
    p0.u1 = u1;
    out.push(p0);
    let rb = x.rank();
    for k in 0..d {
        let mut pk = TangentConeElement::zero(x, &rb);
        pk.y[k] = project_out(x.factor(k), &c.a_nk[k]) * &c.pinv[k];
        out.push(pk);
    }
    Ok(out)
}

/// Partial projection with index `k` (0 for the core block).
pub fn partial_proj(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
    k: usize,
) -> Result<TangentConeElement> {
    if k > x.order() {
        return Err(Error::ModeOutOfRange { mode: k, order: x.order() + 1 });
    }
    Ok(partial_projections(x, a, r, choice)?.swap_remove(k))
}

/// Index of the largest partial projection (smallest index on ties).
pub fn argmax_block(x: &TuckerTensor, blocks: &[TangentConeElement]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, b) in blocks.iter().enumerate() {
        let n = b.norm(x);
        if n > best.1 {
            best = (i, n);
        }
    }
    best
}

/// The largest partial projection and its index.
pub fn hat_proj(
    x: &TuckerTensor,
    a: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<(usize, TangentConeElement)> {
    let mut blocks = partial_projections(x, a, r, choice)?;
    let (k, _) = argmax_block(x, &blocks);
    Ok((k, blocks.swap_remove(k)))
}

/// Normal direction `N = A x_k P_{U_{k,1}}` used to raise the rank; `core`
/// is `A x_k U_{k,1}^T`.
///
/// Modes already at the bound use `U_k` itself (no new columns), so the
/// rank grows only where room is left.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalDirection {
    pub core: DenseTensor,
    pub w: Vec<Matrix>,
    pub grows: Vec<bool>,
}

impl NormalDirection {
    pub fn norm(&self) -> f64 {
        self.core.fro_norm()
    }

    pub fn low_rank_form(&self) -> LowRankTensor {
        LowRankTensor { core: self.core.clone(), factors: self.w.clone() }
    }

    /// `X + s N` in Tucker form: factors `[U_k W_k]` on growing modes and a
    /// block-diagonal core.
    pub fn merged(&self, x: &TuckerTensor, s: f64) -> TuckerTensor {
        let d = x.order();
        let rb = x.rank();
        let mut dims = Vec::with_capacity(d);
        let mut off = Vec::with_capacity(d);
        let mut factors = Vec::with_capacity(d);
        for k in 0..d {
            if self.grows[k] {
                dims.push(rb.dims()[k] + self.w[k].ncols());
                off.push(rb.dims()[k]);
                factors.push(concat_cols(&[x.factor(k), &self.w[k]]));
            } else {
                dims.push(rb.dims()[k]);
                off.push(0);
                factors.push(x.factor(k).clone());
            }
        }
        let mut core = DenseTensor::zeros(Shape::new(dims).expect("positive"));
        embed_add(&mut core, x.core(), &vec![0; d], 1.0);
        embed_add(&mut core, &self.core, &off, s);
        TuckerTensor::from_parts(core, factors)
    }
}

/// Normal direction for a rank increase by `ell` (capped by the bound `r`).
pub fn normal_increase_direction(
    x: &TuckerTensor,
    a: &dyn Ambient,
    ell: &TuckerRank,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<NormalDirection> {
    check_bound(x, r)?;
    let d = x.order();
    let mut w = Vec::with_capacity(d);
    let mut grows = Vec::with_capacity(d);
    for k in 0..d {
        let u = x.factor(k);
        let room = r.dims()[k] - u.ncols();
        let count = ell.dims()[k].min(room);
        if count == 0 {
            w.push(u.clone());
            grows.push(false);
            continue;
        }
        let perp = if choice == ConeBasisChoice::LeadingSingular {
            basis_source(x, a, k, None)?
        } else {
            Matrix::zeros(u.nrows(), 0)
        };
        w.push(select_basis(u, &perp, count, choice, k)?);
        grows.push(true);
    }
    if !grows.iter().any(|&g| g) {
        return Err(Error::InvalidRank(format!("point already at bound {r}")));
    }
    let core = a.contract_all(&w)?;
    Ok(NormalDirection { core, w, grows })
}

/// `||A||_F`, the computable surrogate for the cone stationarity measure at
/// rank-deficient points.
pub fn grad_surrogate_norm(a: &dyn Ambient) -> f64 {
    a.fro_norm()
}

/// HOSVD retraction `P^HO_{<= r}(X + s V)` assembled on the factors
/// `[U_k U1_k Y_k]`.
pub fn retract_hosvd(
    x: &TuckerTensor,
    v: &TangentConeElement,
    s: f64,
    r: &TuckerRank,
) -> Result<TuckerTensor> {
    let form = v.low_rank_form_plus(x, 1.0, s);
    hosvd_tucker(&form.orthonormalized(), r)
}

/// Stationarity measures at a point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StationaritySnapshot {
    /// `||P_T(-grad f)||` on the fixed-rank manifold.
    pub riemannian: f64,
    /// `||grad f||`.
    pub ambient: f64,
    /// `||P~(-grad f)||` for the bound.
    pub approx_cone: f64,
}

pub fn stationarity(
    x: &TuckerTensor,
    neg_grad: &dyn Ambient,
    r: &TuckerRank,
    choice: ConeBasisChoice,
) -> Result<StationaritySnapshot> {
    let t = proj_tangent_space(x, neg_grad)?;
    let p = approx_proj_cone(x, neg_grad, r, choice)?;
    Ok(StationaritySnapshot { riemannian: t.norm(x), ambient: neg_grad.fro_norm(), approx_cone: p.norm(x) })
}
