#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tucker_opt::matkernels::orthonormalize;
use tucker_opt::{DenseTensor, Matrix, Shape, TuckerRank, TuckerTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

pub fn ortho(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    orthonormalize(&gauss(rng, m, n)).unwrap()
}

pub fn dense(rng: &mut ChaCha8Rng, dims: &[usize]) -> DenseTensor {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let data = (0..shape.numel()).map(|_| rng.sample(StandardNormal)).collect();
    DenseTensor::new(shape, data).unwrap()
}

pub fn tucker(rng: &mut ChaCha8Rng, dims: &[usize], r: &[usize]) -> TuckerTensor {
    let core = dense(rng, r);
    let factors = dims.iter().zip(r).map(|(&n, &k)| ortho(rng, n, k)).collect();
    TuckerTensor::new(core, factors).unwrap()
}

pub fn rank(r: &[usize]) -> TuckerRank {
    TuckerRank(r.to_vec())
}

pub fn diff_norm(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().fro_norm()
}

/// Entry-by-entry mode-k product, independent of the library kernel.
pub fn naive_mode_product(x: &DenseTensor, k: usize, a: &Matrix) -> DenseTensor {
    let mut dims = x.dims().to_vec();
    dims[k] = a.nrows();
    let shape = Shape::new(dims).unwrap();
    DenseTensor::from_fn(shape, |idx| {
        let mut j = idx.to_vec();
        (0..a.ncols())
            .map(|c| {
                j[k] = c;
                a[(idx[k], c)] * x.get(&j)
            })
            .sum()
    })
}

/// Singular values straight from nalgebra, bypassing the library wrapper.
/// nalgebra occasionally misconverges on rank-deficient input, so the
/// factorization is checked and, on failure, redone on `Q m` for random
/// orthogonal `Q` (same singular values).
pub fn sigmas(m: &Matrix) -> Vec<f64> {
    let mut g = rng(0x5EED);
    let mut a = m.clone();
    for _ in 0..20 {
        let svd = a.clone().svd(true, true);
        if (svd.clone().recompose().unwrap() - &a).norm() <= 1e-11 * a.norm().max(f64::MIN_POSITIVE) {
            let mut v: Vec<f64> = svd.singular_values.iter().copied().collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            return v;
        }
        let q = ortho(&mut g, m.nrows(), m.nrows());
        a = q * m;
    }
    panic!("no reliable SVD for the oracle");
}

/// Numerical rank of each unfolding of a dense tensor, relative to the
/// largest singular value of that unfolding.
pub fn dense_rank(a: &DenseTensor, rel: f64) -> Vec<usize> {
    (0..a.order())
        .map(|k| {
            let s = sigmas(&a.unfold(k).unwrap());
            let top = s.first().copied().unwrap_or(0.0);
            s.iter().filter(|&&v| v > rel * top && v > 0.0).count()
        })
        .collect()
}
