mod common;

use common::*;
use proptest::prelude::*;
use tucker_opt::tenalg::{kron, outer_rank1};
use tucker_opt::{DenseTensor, Matrix, Shape};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn identity_mode_product_is_noop() {
    let mut g = rng(1);
    let x = dense(&mut g, &[3, 4, 2]);
    for k in 0..3 {
        let i = Matrix::identity(x.dims()[k], x.dims()[k]);
        assert_eq!(x.mode_product(k, &i).unwrap(), x);
    }
}

#[test]
fn mode_product_on_rank_one() {
    let u = [1.0, -2.0, 0.5];
    let v = [3.0, 1.0];
    let w = [2.0, 0.0, -1.0, 4.0];
    let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, -1.0, 3.0, 1.0]);
    let au: Vec<f64> = (0..2).map(|i| (0..3).map(|j| a[(i, j)] * u[j]).sum()).collect();
    let lhs = outer_rank1(&[&u, &v, &w]).unwrap().mode_product(0, &a).unwrap();
    let rhs = outer_rank1(&[&au, &v, &w]).unwrap();
    assert!(diff_norm(&lhs, &rhs) < 1e-14);
}

#[test]
fn mode_product_matches_unfolding_product() {
    let mut g = rng(2);
    let x = dense(&mut g, &[3, 3, 3]);
    let a = gauss(&mut g, 2, 3);
    for k in 0..3 {
        let y = x.mode_product(k, &a).unwrap();
        let want = &a * x.unfold(k).unwrap();
        assert!((y.unfold(k).unwrap() - want).norm() < 1e-13);
        assert!(diff_norm(&y, &naive_mode_product(&x, k, &a)) < 1e-13);
    }
}

#[test]
fn mode_product_dimension_mismatch() {
    let x = DenseTensor::zeros(Shape::new(vec![3, 2]).unwrap());
    assert!(x.mode_product(0, &Matrix::zeros(2, 2)).is_err());
    assert!(x.mode_product(2, &Matrix::zeros(2, 2)).is_err());
}

#[test]
fn inner_and_norm_basics() {
    let mut g = rng(3);
    let x = dense(&mut g, &[2, 3, 2]);
    let z = DenseTensor::zeros(x.shape().clone());
    assert_eq!(x.inner(&z).unwrap(), 0.0);
    let e = [1.0, 0.0, 0.0];
    assert_eq!(outer_rank1(&[&e, &e, &e]).unwrap().fro_norm(), 1.0);
    assert!(x.inner(&DenseTensor::zeros(Shape::new(vec![2, 3]).unwrap())).is_err());
}

#[test]
fn outer_product_entries() {
    let e = [1.0, 0.0];
    let t = outer_rank1(&[&e, &e, &e]).unwrap();
    assert_eq!(t.data().iter().sum::<f64>(), 1.0);
    assert_eq!(t.get(&[0, 0, 0]), 1.0);
    let t = outer_rank1(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
    // 1-based entry (2,1,2)
    assert_eq!(t.get(&[1, 0, 1]), 36.0);
    let c = outer_rank1(&[&[3.0, 6.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
    let mut s = t.clone();
    s.scale(3.0);
    assert!(diff_norm(&c, &s) < 1e-12);
}

#[test]
fn kron_examples() {
    let a = Matrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let b = Matrix::from_row_slice(2, 1, &[3.0, 4.0]);
    assert_eq!(kron(&a, &b), Matrix::from_row_slice(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    let mut g = rng(4);
    let b = gauss(&mut g, 2, 3);
    let k = kron(&Matrix::identity(2, 2), &b);
    assert_eq!(k.view((0, 0), (2, 3)), b.view((0, 0), (2, 3)));
    assert_eq!(k.view((2, 3), (2, 3)), b.view((0, 0), (2, 3)));
    assert_eq!(k.view((0, 3), (2, 3)).norm(), 0.0);
    let (a, b, c, d) = (gauss(&mut g, 2, 3), gauss(&mut g, 3, 2), gauss(&mut g, 3, 4), gauss(&mut g, 4, 2));
    let lhs = kron(&a, &c) * kron(&b, &d);
    let rhs = kron(&(&a * &b), &(&c * &d));
    assert!((lhs - rhs).norm() < 1e-12);
}

#[test]
fn multi_mode_product_rules() {
    let mut g = rng(5);
    let x = dense(&mut g, &[3, 3, 3]);
    let i3 = Matrix::identity(3, 3);
    assert_eq!(x.multi_mode_product(&[(0, &i3), (1, &i3), (2, &i3)]).unwrap(), x);
    let (a, b) = (gauss(&mut g, 2, 3), gauss(&mut g, 4, 3));
    let ab = x.multi_mode_product(&[(0, &a), (1, &b)]).unwrap();
    let ba = x.multi_mode_product(&[(1, &b), (0, &a)]).unwrap();
    let seq = x.mode_product(1, &b).unwrap().mode_product(0, &a).unwrap();
    assert!(diff_norm(&ab, &ba) <= 1e-13 * ab.fro_norm());
    assert!(diff_norm(&ab, &seq) <= 1e-13 * ab.fro_norm());
    assert!(x.multi_mode_product(&[(0, &a), (0, &a)]).is_err());
    let core = dense(&mut g, &[2, 3, 2]);
    let us = vec![ortho(&mut g, 5, 2), ortho(&mut g, 4, 3), ortho(&mut g, 6, 2)];
    let big = core.all_mode_product(&us).unwrap();
    assert!(rel(big.fro_norm(), core.fro_norm()) < 1e-12);
}

fn arb_tensor() -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(-1.0f64..1.0, n)
            .prop_map(move |data| DenseTensor::new(Shape::new(dims.clone()).unwrap(), data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_unfold_roundtrip_is_bitwise(x in arb_tensor()) {
        for k in 0..x.order() {
            let back = DenseTensor::fold(&x.unfold(k).unwrap(), k, x.shape()).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }
    }

    #[test]
    fn unfolding_commutes_with_mode_product(x in arb_tensor(), seed in 0u64..1000) {
        let mut g = rng(seed);
        for k in 0..x.order() {
            let a = Matrix::from_fn(3, x.dims()[k], |_, _| rand::Rng::random_range(&mut g, -1.0..1.0));
            let y = x.mode_product(k, &a).unwrap();
            let want = &a * x.unfold(k).unwrap();
            let err = (y.unfold(k).unwrap() - &want).norm();
            prop_assert!(err <= 1e-13 * want.norm().max(1.0));
        }
    }

    #[test]
    fn unfolding_is_an_isometry(x in arb_tensor(), seed in 0u64..1000) {
        let mut g = rng(seed);
        let y = DenseTensor::from_fn(x.shape().clone(), |_| rand::Rng::random_range(&mut g, -1.0..1.0));
        let ip = x.inner(&y).unwrap();
        for k in 0..x.order() {
            let m = x.unfold(k).unwrap().dot(&y.unfold(k).unwrap());
            prop_assert!((m - ip).abs() <= 1e-12 * (1.0 + ip.abs()));
        }
    }

    #[test]
    fn distinct_mode_products_commute(seed in 0u64..1000) {
        let mut g = rng(seed);
        let x = dense(&mut g, &[3, 4, 2]);
        let a = gauss(&mut g, 2, 3);
        let b = gauss(&mut g, 3, 2);
        let p = x.mode_product(0, &a).unwrap().mode_product(2, &b).unwrap();
        let q = x.mode_product(2, &b).unwrap().mode_product(0, &a).unwrap();
        prop_assert!(diff_norm(&p, &q) <= 1e-13 * p.fro_norm());
    }

    #[test]
    fn orthonormal_mode_product_preserves_norm(seed in 0u64..1000, k in 0usize..3) {
        let mut g = rng(seed);
        let x = dense(&mut g, &[2, 3, 2]);
        let u = ortho(&mut g, 7, x.dims()[k]);
        let y = x.mode_product(k, &u).unwrap();
        prop_assert!(rel(y.fro_norm(), x.fro_norm()) <= 1e-12);
    }
}
