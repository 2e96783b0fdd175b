mod common;

use common::*;
use proptest::prelude::*;
use tucker_opt::matkernels::*;
use tucker_opt::Matrix;

fn eye_cols(n: usize, r: usize) -> Matrix {
    Matrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 })
}

#[test]
fn svd_examples() {
    let d = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let s = thin_svd(&d, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(s.s, vec![3.0, 1.0]);
    assert!((s.u.abs() - Matrix::identity(2, 2)).norm() < 1e-15);
    assert!((s.v.abs() - Matrix::identity(2, 2)).norm() < 1e-15);

    let z = thin_svd(&Matrix::zeros(3, 2), DEFAULT_RANK_TOL).unwrap();
    assert_eq!(z.rank(), 0);
    assert_eq!(z.u.ncols(), 0);

    let mut g = rng(10);
    let a = gauss(&mut g, 5, 3);
    let s = thin_svd(&a, DEFAULT_RANK_TOL).unwrap();
    assert!((s.reconstruct() - &a).norm() <= 1e-10 * a.norm());
    assert!((s.u.transpose() * &s.u - Matrix::identity(3, 3)).norm() < 1e-12);
    assert!((s.v.transpose() * &s.v - Matrix::identity(3, 3)).norm() < 1e-12);
    assert!(s.s.windows(2).all(|w| w[0] >= w[1]));

    let mut bad = a.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(thin_svd(&bad, DEFAULT_RANK_TOL).is_err());
}

#[test]
fn truncation_examples() {
    let d = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let t = truncate_rank(&d, 1).unwrap();
    assert!((t - Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
    assert!((truncate_rank(&d, 2).unwrap() - &d).norm() < 1e-14);

    let mut g = rng(11);
    let a = gauss(&mut g, 4, 4);
    let s = sigmas(&a);
    let res = (&a - truncate_rank(&a, 2).unwrap()).norm_squared();
    assert!((res - (s[2] * s[2] + s[3] * s[3])).abs() < 1e-10);
}

#[test]
fn eckart_young_against_random_competitors() {
    let mut g = rng(12);
    for trial in 0..5 {
        let a = gauss(&mut g, 6, 5);
        let r = 1 + trial % 3;
        let best = (&a - truncate_rank(&a, r).unwrap()).norm();
        for _ in 0..100 {
            let b = gauss(&mut g, 6, r) * gauss(&mut g, r, 5);
            assert!(best <= (&a - b).norm());
        }
    }
}

#[test]
fn orthonormalize_examples() {
    let b = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let q = orthonormalize(&b).unwrap();
    let h = 1.0 / 2f64.sqrt();
    assert!((q - Matrix::from_row_slice(2, 1, &[h, h])).norm() < 1e-15);

    let mut g = rng(13);
    let u = ortho(&mut g, 6, 3);
    assert!((orthonormalize(&u).unwrap() - &u).norm() < 1e-12);

    let b = gauss(&mut g, 6, 3);
    let q = orthonormalize(&b).unwrap();
    assert!((q.transpose() * &q - Matrix::identity(3, 3)).norm() < 1e-12);
    // same span: B is reproduced by projecting onto span(Q)
    assert!((&q * (q.transpose() * &b) - &b).norm() < 1e-10 * b.norm());

    let dup = Matrix::from_columns(&[b.column(0).into_owned(), b.column(0).into_owned()]);
    assert!(orthonormalize(&dup).is_err());
}

#[test]
fn complement_examples() {
    let u = eye_cols(5, 2);
    let w = complement_basis(&u, 3).unwrap();
    for j in 0..3 {
        let col = w.column(j);
        assert_eq!(col.iter().filter(|v| v.abs() > 0.0).count(), 1);
        assert_eq!(col[0], 0.0);
        assert_eq!(col[1], 0.0);
    }
    assert_eq!(complement_basis(&u, 0).unwrap().ncols(), 0);
    assert!(complement_basis(&u, 4).is_err());

    let mut g = rng(14);
    for _ in 0..20 {
        let u = ortho(&mut g, 7, 3);
        let w = complement_basis(&u, 4).unwrap();
        assert!((w.transpose() * &w - Matrix::identity(4, 4)).norm() < 1e-12);
        assert!((u.transpose() * &w).norm() < 1e-12);
    }
}

#[test]
fn pinv_examples() {
    let g = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
    let p = pinv_unfolding(&g).unwrap();
    assert!((p - Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0 / 3.0])).norm() < 1e-15);
    let g = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    assert!((pinv_unfolding(&g).unwrap() - Matrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0])).norm() < 1e-15);

    let mut r = rng(15);
    let g = gauss(&mut r, 3, 7);
    let p = pinv_unfolding(&g).unwrap();
    assert!((&g * &p - Matrix::identity(3, 3)).norm() < 1e-10);
    assert!((&g * &p * &g - &g).norm() < 1e-10);
    // right inverse formula g^T (g g^T)^{-1}
    let want = g.transpose() * (&g * g.transpose()).try_inverse().unwrap();
    assert!((p - want).norm() < 1e-10);

    let low = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
    match pinv_unfolding(&low) {
        Err(tucker_opt::Error::RankDeficient { condition }) => assert!(condition > 1e12),
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

/// A cone element at `x = U S V^T` from the reduced parametrization: the
/// tangent-space part plus a rank-`r - rank(x)` block in the orthogonal
/// complements on both sides.
fn random_cone_member(g: &mut rand_chacha::ChaCha8Rng, x: &Matrix, r: usize) -> Matrix {
    let svd = thin_svd(x, DEFAULT_RANK_TOL).unwrap();
    let (u, v) = (&svd.u, &svd.v);
    let (m, n) = x.shape();
    let rb = u.ncols();
    let up = project_out(u, &gauss(g, m, r - rb));
    let vp = project_out(v, &gauss(g, n, r - rb));
    let m_ = gauss(g, rb, rb);
    let up2 = project_out(u, &gauss(g, m, rb));
    let vp2 = project_out(v, &gauss(g, n, rb));
    u * m_ * v.transpose() + up2 * v.transpose() + u * vp2.transpose() + up * vp.transpose()
}

#[test]
fn matrix_cone_projection() {
    let mut g = rng(16);
    let x = gauss(&mut g, 4, 1) * gauss(&mut g, 1, 4);
    let a = gauss(&mut g, 4, 4);
    let p = proj_matrix_tangent_cone(&x, &a, 2).unwrap();
    let best = (&a - &p).norm();
    for _ in 0..500 {
        let w = random_cone_member(&mut g, &x, 2);
        // the cone is not convex, so test metric optimality against every
        // sampled member at its best nonnegative scaling
        let t = (a.dot(&w) / w.norm_squared()).max(0.0);
        assert!(best <= (&a - w * t).norm() + 1e-12);
    }
    assert!((&a - &p).dot(&p).abs() < 1e-10);

    // r = rank(x): tangent-space projection only
    let t = proj_matrix_tangent_cone(&x, &a, 1).unwrap();
    let svd = thin_svd(&x, DEFAULT_RANK_TOL).unwrap();
    let (pu, pv) = (&svd.u * svd.u.transpose(), &svd.v * svd.v.transpose());
    let want = &pu * &a + &a * &pv - &pu * &a * &pv;
    assert!((t - want).norm() < 1e-12);

    // x = 0: plain truncated SVD
    let z = proj_matrix_tangent_cone(&Matrix::zeros(4, 4), &a, 2).unwrap();
    assert!((z - truncate_rank(&a, 2).unwrap()).norm() < 1e-12);

    assert!(proj_matrix_tangent_cone(&x, &a, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cone_projection_is_idempotent(seed in 0u64..10_000, rb in 1usize..3, extra in 0usize..3) {
        let mut g = rng(seed);
        let x = gauss(&mut g, 6, rb) * gauss(&mut g, rb, 5);
        let a = gauss(&mut g, 6, 5);
        let p = proj_matrix_tangent_cone(&x, &a, rb + extra).unwrap();
        let pp = proj_matrix_tangent_cone(&x, &p, rb + extra).unwrap();
        prop_assert!((&pp - &p).norm() <= 1e-10 * p.norm().max(1.0));
    }

    #[test]
    fn complement_always_orthogonal(seed in 0u64..10_000, n in 2usize..9, r in 0usize..4) {
        let r = r.min(n - 1);
        let mut g = rng(seed);
        let u = if r == 0 { Matrix::zeros(n, 0) } else { ortho(&mut g, n, r) };
        let w = complement_basis(&u, n - r).unwrap();
        prop_assert!((w.transpose() * &w - Matrix::identity(n - r, n - r)).norm() < 1e-12);
        prop_assert!((u.transpose() * &w).norm() < 1e-12);
    }

    #[test]
    fn pinv_is_moore_penrose(seed in 0u64..10_000, r in 1usize..4, extra in 0usize..5) {
        let mut g = rng(seed);
        let a = gauss(&mut g, r, r + extra);
        let p = pinv_unfolding(&a).unwrap();
        prop_assert!((&a * &p * &a - &a).norm() <= 1e-10 * a.norm());
        prop_assert!((&p * &a * &p - &p).norm() <= 1e-10 * p.norm());
    }
}
