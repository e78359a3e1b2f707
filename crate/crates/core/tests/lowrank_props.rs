//! Factored arithmetic against dense reconstructions.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_eig::lowrank::{BlockVec, LowRankFactor};

fn factor(seed: u64, n: usize, m: usize, r: usize) -> LowRankFactor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LowRankFactor {
        u: DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)),
        v: DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0)),
    }
}

/// Factor with geometrically decaying singular values.
fn graded(seed: u64, n: usize, m: usize, r: usize, decay: f64) -> LowRankFactor {
    let f = factor(seed, n, m, r);
    let qu = f.u.qr().q();
    let qv = f.v.qr().q();
    let s = DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| decay.powi(i as i32)));
    LowRankFactor { u: qu, v: qv * s }
}

fn block(seed: u64, n: usize, m: usize, r: usize) -> BlockVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    BlockVec {
        y: factor(seed, n, m, r),
        z: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn truncation_error_bound(seed in any::<u64>(), n in 2usize..40, m in 2usize..30, r in 1usize..12,
                              decay in 0.05f64..0.9, leps in -10.0f64..-1.0) {
        let r = r.min(n).min(m);
        let x = graded(seed, n, m, r, decay);
        let eps = 10f64.powf(leps);
        let t = x.truncate(eps);
        let dense = x.to_dense();
        let err = (&dense - t.to_dense()).norm();
        prop_assert!(err <= eps * dense.norm() * (1.0 + 1e-10) + 1e-14, "err {err:e} eps {eps:e}");
        prop_assert!(t.rank() <= n.min(m));
        // U orthonormal after recompression
        let g = t.u.transpose() * &t.u;
        prop_assert!((g - DMatrix::identity(t.rank(), t.rank())).norm() <= 1e-12);
    }

    #[test]
    fn truncation_is_optimal_rank(seed in any::<u64>(), n in 5usize..30, m in 5usize..30) {
        // the kept rank is the smallest one allowed by the dense singular values
        let x = factor(seed, n, m, 6).add_scaled(1e-3, &factor(seed.wrapping_add(1), n, m, 3));
        let eps = 1e-4;
        let t = x.truncate(eps);
        let sv = x.to_dense().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tail = |k: usize| s[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = t.rank();
        prop_assert!(tail(k) <= eps * total * (1.0 + 1e-8));
        if k > 0 {
            prop_assert!(tail(k - 1) > eps * total * (1.0 - 1e-8));
        }
    }

    #[test]
    fn absolute_truncation_bound(seed in any::<u64>(), n in 2usize..30, m in 2usize..30, ltol in -8.0f64..0.0) {
        let x = graded(seed, n, m, n.min(m).min(8), 0.3);
        let tol = 10f64.powf(ltol);
        let t = x.truncate_abs(tol);
        prop_assert!((x.to_dense() - t.to_dense()).norm() <= tol * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn norm_and_dot_round_trip(seed in any::<u64>(), n in 1usize..30, m in 1usize..20, r1 in 0usize..6, r2 in 0usize..6) {
        let a = block(seed, n, m, r1);
        let b = block(seed.wrapping_mul(31).wrapping_add(7), n, m, r2);
        let (da, db) = (a.to_dense(), b.to_dense());
        let na = da.norm();
        prop_assert!((a.norm() - na).abs() <= 1e-12 * na.max(1e-300));
        let d = a.dot(&b).unwrap();
        prop_assert!((d - da.dot(&db)).abs() <= 1e-12 * (na * db.norm()).max(1e-300));
        prop_assert!(a.dot(&a).unwrap() >= 0.0);
    }

    #[test]
    fn axpy_is_exact(seed in any::<u64>(), alpha in -5.0f64..5.0) {
        let a = block(seed, 12, 7, 3);
        let b = block(seed.wrapping_add(99), 12, 7, 2);
        let c = a.axpy(alpha, &b).unwrap();
        let expect = a.to_dense() + b.to_dense() * alpha;
        prop_assert!((c.to_dense() - &expect).norm() <= 1e-12 * (1.0 + expect.norm()));
        let ct = c.truncate(1e-8);
        prop_assert!((ct.to_dense() - &expect).norm() <= 1e-8 * expect.norm() * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn dense_round_trip(seed in any::<u64>(), n in 1usize..15, m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_fn(n * m + m, |_, _| rng.random_range(-1.0..1.0));
        let b = BlockVec::from_dense(&x, n, m, 1e-14).unwrap();
        prop_assert!((b.to_dense() - &x).norm() <= 1e-12 * x.norm());
    }
}

#[test]
fn rank_one_survives_truncation() {
    let x = factor(3, 10, 6, 1);
    for eps in [1e-12, 1e-6, 0.5] {
        let t = x.truncate(eps);
        assert_eq!(t.rank(), 1);
        assert!((x.to_dense() - t.to_dense()).norm() <= 1e-14 * x.norm().max(1.0) * 10.0);
    }
}

#[test]
fn parallel_sum_collapses() {
    let x = factor(4, 10, 6, 1);
    let s = x.add_scaled(1.0, &x);
    assert_eq!(s.rank(), 2);
    let t = s.truncate(1e-12);
    assert_eq!(t.rank(), 1);
    assert!((t.to_dense() - x.to_dense() * 2.0).norm() <= 1e-13);
}

#[test]
fn cancelling_sum_has_accurate_norm() {
    let x = factor(5, 20, 8, 3);
    let y = LowRankFactor { u: &x.u * 1.0, v: &x.v * (1.0 + 1e-12) };
    let d = y.add_scaled(-1.0, &x);
    let dense = d.to_dense().norm();
    assert!((d.norm() - dense).abs() <= 1e-3 * dense);
}

#[test]
fn orthogonal_blocks_have_zero_dot() {
    let mut u1 = DMatrix::zeros(4, 1);
    u1[(0, 0)] = 1.0;
    let mut u2 = DMatrix::zeros(4, 1);
    u2[(1, 0)] = 1.0;
    let v = DMatrix::from_element(3, 1, 1.0);
    let a = BlockVec { y: LowRankFactor { u: u1, v: v.clone() }, z: DVector::from_vec(vec![1.0, 0.0, 0.0]) };
    let b = BlockVec { y: LowRankFactor { u: u2, v }, z: DVector::from_vec(vec![0.0, 1.0, 0.0]) };
    assert_eq!(a.dot(&b).unwrap(), 0.0);
}

#[test]
fn mismatched_shapes_are_errors() {
    let a = block(1, 5, 3, 1);
    let b = block(2, 5, 4, 1);
    assert!(a.dot(&b).is_err());
    assert!(a.axpy(1.0, &b).is_err());
}
