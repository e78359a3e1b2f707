//! Factored `N_x x N_xi` matrices `X = U V^T` and the stacked Newton unknown
//! `[vec(Y); z]` built from one of them plus a dense coefficient vector.
//!
//! After truncation `U` has orthonormal columns and `V` carries the singular
//! values.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactor {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankFactor {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks differ: U has {} columns, V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(LowRankFactor { u, v })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        LowRankFactor {
            u: DMatrix::zeros(nrows, 0),
            v: DMatrix::zeros(ncols, 0),
        }
    }

    /// Exact factorization of a dense matrix (`U = X`, `V = I`), then truncated.
    pub fn from_dense(x: &DMatrix<f64>, eps: f64) -> Self {
        LowRankFactor {
            u: x.clone(),
            v: DMatrix::identity(x.ncols(), x.ncols()),
        }
        .truncate(eps)
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// `trace(X^T Y)` from the factors only.
    pub fn inner(&self, other: &LowRankFactor) -> f64 {
        if self.rank() == 0 || other.rank() == 0 {
            return 0.0;
        }
        let uu = self.u.transpose() * &other.u;
        let vv = self.v.transpose() * &other.v;
        uu.component_mul(&vv).sum()
    }

    /// Frobenius norm as `||R_U R_V^T||_F`, which avoids the cancellation of
    /// the Gram form on sums of nearly opposite terms.
    pub fn norm(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        let ru = self.u.clone().qr().r();
        let rv = self.v.clone().qr().r();
        (ru * rv.transpose()).norm()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        LowRankFactor {
            u: self.u.clone(),
            v: &self.v * alpha,
        }
    }

    /// `self + alpha * other` by concatenating factors (rank adds up).
    pub fn add_scaled(&self, alpha: f64, other: &LowRankFactor) -> Self {
        let (n, nxi) = (self.nrows(), self.ncols());
        let (r1, r2) = (self.rank(), other.rank());
        let mut u = DMatrix::zeros(n, r1 + r2);
        let mut v = DMatrix::zeros(nxi, r1 + r2);
        u.columns_mut(0, r1).copy_from(&self.u);
        u.columns_mut(r1, r2).copy_from(&other.u);
        v.columns_mut(0, r1).copy_from(&self.v);
        v.columns_mut(r1, r2).copy_from(&(&other.v * alpha));
        LowRankFactor { u, v }
    }

    /// Concatenate several factors into one sum.
    pub fn sum(nrows: usize, ncols: usize, parts: &[(DMatrix<f64>, DMatrix<f64>)]) -> Self {
        let total: usize = parts.iter().map(|(u, _)| u.ncols()).sum();
        let mut u = DMatrix::zeros(nrows, total);
        let mut v = DMatrix::zeros(ncols, total);
        let mut off = 0;
        for (pu, pv) in parts {
            let r = pu.ncols();
            u.columns_mut(off, r).copy_from(pu);
            v.columns_mut(off, r).copy_from(pv);
            off += r;
        }
        LowRankFactor { u, v }
    }

    /// Recompress, dropping trailing singular values whose tail norm is at
    /// most `eps * ||X||_F`.
    pub fn truncate(&self, eps: f64) -> Self {
        self.recompress(|total| eps * total)
    }

    /// Recompress with an absolute Frobenius tolerance on the dropped tail.
    pub fn truncate_abs(&self, tol: f64) -> Self {
        self.recompress(|_| tol)
    }

    fn recompress(&self, tol_of: impl Fn(f64) -> f64) -> Self {
        let (n, nxi) = (self.nrows(), self.ncols());
        if self.rank() == 0 {
            return LowRankFactor::zeros(n, nxi);
        }
        let qr_u = self.u.clone().qr();
        let qr_v = self.v.clone().qr();
        let (qu, ru) = (qr_u.q(), qr_u.r());
        let (qv, rv) = (qr_v.q(), qr_v.r());
        let core = &ru * rv.transpose();
        let svd = core.svd(true, true);
        let (w, zt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = svd.singular_values;

        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let total = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if total == 0.0 || !total.is_finite() {
            return LowRankFactor::zeros(n, nxi);
        }
        let tol = tol_of(total);
        // smallest k with sum_{i >= k} s_i^2 <= tol^2
        let mut keep = order.len();
        let mut tail = 0.0;
        while keep > 0 {
            let next = tail + s[order[keep - 1]].powi(2);
            if next.sqrt() > tol {
                break;
            }
            tail = next;
            keep -= 1;
        }
        let mut u = DMatrix::zeros(n, keep);
        let mut v = DMatrix::zeros(nxi, keep);
        for (c, &i) in order.iter().take(keep).enumerate() {
            u.set_column(c, &(&qu * w.column(i)));
            let zcol = zt.row(i).transpose();
            v.set_column(c, &(&qv * zcol * s[i]));
        }
        LowRankFactor { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Stacked unknown `[vec(Y); z]` with `Y` in factored form.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVec {
    pub y: LowRankFactor,
    pub z: DVector<f64>,
}

impl BlockVec {
    pub fn new(y: LowRankFactor, z: DVector<f64>) -> Result<Self> {
        if y.ncols() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "Y has {} chaos columns but z has length {}",
                y.ncols(),
                z.len()
            )));
        }
        Ok(BlockVec { y, z })
    }

    pub fn zeros(nx: usize, nxi: usize) -> Self {
        BlockVec {
            y: LowRankFactor::zeros(nx, nxi),
            z: DVector::zeros(nxi),
        }
    }

    pub fn nx(&self) -> usize {
        self.y.nrows()
    }

    pub fn nxi(&self) -> usize {
        self.z.len()
    }

    /// Length of the stacked vector, `(N_x + 1) N_xi`.
    pub fn dim(&self) -> usize {
        (self.nx() + 1) * self.nxi()
    }

    pub fn rank(&self) -> usize {
        self.y.rank()
    }

    fn check(&self, other: &BlockVec) -> Result<()> {
        if self.nx() != other.nx() || self.nxi() != other.nxi() {
            return Err(Error::DimensionMismatch(format!(
                "block vectors of shape ({}, {}) and ({}, {})",
                self.nx(),
                self.nxi(),
                other.nx(),
                other.nxi()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &BlockVec) -> Result<f64> {
        self.check(other)?;
        Ok(self.y.inner(&other.y) + self.z.dot(&other.z))
    }

    pub fn norm(&self) -> f64 {
        self.y.norm().hypot(self.z.norm())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        BlockVec {
            y: self.y.scale(alpha),
            z: &self.z * alpha,
        }
    }

    /// `self + alpha * other`, untruncated.
    pub fn axpy(&self, alpha: f64, other: &BlockVec) -> Result<Self> {
        self.check(other)?;
        Ok(BlockVec {
            y: self.y.add_scaled(alpha, &other.y),
            z: &self.z + &other.z * alpha,
        })
    }

    pub fn truncate(&self, eps: f64) -> Self {
        BlockVec {
            y: self.y.truncate(eps),
            z: self.z.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.z.iter().all(|x| x.is_finite())
    }

    /// Dense stacked vector: columns of `Y` in order, then `z`.
    pub fn to_dense(&self) -> DVector<f64> {
        let y = self.y.to_dense();
        let mut out = DVector::zeros(self.dim());
        let n = y.len();
        out.rows_mut(0, n).copy_from_slice(y.as_slice());
        out.rows_mut(n, self.nxi()).copy_from(&self.z);
        out
    }

    /// Inverse of [`BlockVec::to_dense`]; the `Y` block is compressed at `eps`.
    pub fn from_dense(x: &DVector<f64>, nx: usize, nxi: usize, eps: f64) -> Result<Self> {
        if x.len() != (nx + 1) * nxi {
            return Err(Error::DimensionMismatch(format!(
                "stacked vector of length {} for N_x = {nx}, N_xi = {nxi}",
                x.len()
            )));
        }
        let y = DMatrix::from_column_slice(nx, nxi, &x.as_slice()[..nx * nxi]);
        Ok(BlockVec {
            y: LowRankFactor::from_dense(&y, eps),
            z: DVector::from_column_slice(&x.as_slice()[nx * nxi..]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = LowRankFactor::new(random(&mut rng, 12, 1), random(&mut rng, 7, 1)).unwrap();
        let t = x.truncate(0.3);
        assert_eq!(t.rank(), 1);
        assert!((x.to_dense() - t.to_dense()).norm() <= 1e-14);
        let doubled = x.add_scaled(1.0, &x).truncate(1e-12);
        assert_eq!(doubled.rank(), 1);
        assert!((doubled.to_dense() - x.to_dense() * 2.0).norm() <= 1e-13);
    }

    #[test]
    fn truncation_bound_against_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = LowRankFactor::new(random(&mut rng, 30, 8), random(&mut rng, 15, 8)).unwrap();
        let dense = x.to_dense();
        for &eps in &[1e-1, 1e-3, 1e-6] {
            let t = x.truncate(eps);
            assert!((&dense - t.to_dense()).norm() <= eps * dense.norm() * (1.0 + 1e-12));
            // minimality: the dense singular values say how many must be kept
            let mut s: Vec<f64> = dense.clone().svd(false, false).singular_values.iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            let tail = |k: usize| s[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            let k = t.rank();
            assert!(tail(k) <= eps * dense.norm() * (1.0 + 1e-10));
            if k > 0 {
                assert!(tail(k - 1) > eps * dense.norm() * (1.0 - 1e-10));
            }
        }
    }

    #[test]
    fn orthonormal_u_after_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = LowRankFactor::new(random(&mut rng, 20, 5), random(&mut rng, 9, 5)).unwrap();
        let t = x.truncate(1e-10);
        let gram = t.u.transpose() * &t.u;
        assert!((gram - DMatrix::identity(t.rank(), t.rank())).norm() <= 1e-12);
    }

    #[test]
    fn zero_input_gives_rank_zero() {
        let z = LowRankFactor::new(DMatrix::zeros(5, 2), DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(z.truncate(1e-6).rank(), 0);
        assert_eq!(LowRankFactor::zeros(5, 4).truncate(1e-6).rank(), 0);
    }

    #[test]
    fn dot_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng| BlockVec {
            y: LowRankFactor::new(random(rng, 20, 3), random(rng, 10, 3)).unwrap(),
            z: DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0)),
        };
        let (x, y) = (mk(&mut rng), mk(&mut rng));
        let dense = x.to_dense().dot(&y.to_dense());
        assert_abs_diff_eq!(x.dot(&y).unwrap(), dense, epsilon = 1e-12 * dense.abs().max(1.0));
        assert_abs_diff_eq!(x.norm(), x.to_dense().norm(), epsilon = 1e-12);
        assert!(x.dot(&x).unwrap() >= 0.0);
    }

    #[test]
    fn orthogonal_blocks_have_zero_dot() {
        let mut u1 = DMatrix::zeros(6, 1);
        u1[(0, 0)] = 1.0;
        let mut u2 = DMatrix::zeros(6, 1);
        u2[(1, 0)] = 1.0;
        let v = DMatrix::from_element(3, 1, 1.0);
        let x = BlockVec::new(LowRankFactor::new(u1, v.clone()).unwrap(), DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let y = BlockVec::new(LowRankFactor::new(u2, v).unwrap(), DVector::from_vec(vec![0.0, 2.0, 0.0])).unwrap();
        assert_eq!(x.dot(&y).unwrap(), 0.0);
    }

    #[test]
    fn dense_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DVector::from_fn(6 * 4, |_, _| rng.random_range(-1.0..1.0));
        let b = BlockVec::from_dense(&x, 5, 4, 1e-14).unwrap();
        assert!((b.to_dense() - &x).norm() <= 1e-13);
        assert!(BlockVec::from_dense(&x, 4, 4, 1e-14).is_err());
        assert!(b.dot(&BlockVec::zeros(5, 3)).is_err());
    }
}
