//! Residual, Jacobian action and mean-based preconditioner of the stochastic
//! Galerkin eigenproblem, all in factored form.
//!
//! With the eigenvector coefficients arranged as `Y = [phi_0, ..., phi_{N_xi-1}]`
//! the residual is
//!
//! ```text
//! F1 = sum_k A_k Y G_k - Y H(theta),      H(theta) = sum_k theta_k H_k
//! F2_k = trace(H_k Y^T Y) - delta_k0
//! ```
//!
//! and the Jacobian maps `(S, z)` to
//! `(sum_k A_k S G_k - S H(theta) - Y H(z), 2 trace(H_k Y^T S))`.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::StochasticMatrixFamily;
use crate::lowrank::{BlockVec, LowRankFactor};
use crate::pce::GalerkinTensors;

/// Guard on `|1 - theta_0|` below which the preconditioner is refused.
pub const SINGULAR_GUARD: f64 = 1e-12;
/// Guard on the Schur scalar `v0^T (A_0 - I)^{-1} v0`.
pub const SCHUR_GUARD: f64 = 1e-14;

/// Dense LU of `A_0 - I`, computed once per run.
#[derive(Clone, Debug)]
pub struct MeanPreconditioner {
    lu: LU<f64, Dyn, Dyn>,
}

impl MeanPreconditioner {
    pub fn new(a0: &CsrMatrix<f64>) -> Result<Self> {
        let n = a0.nrows();
        let shifted = DMatrix::from(a0) - DMatrix::identity(n, n);
        let lu = shifted.lu();
        if !lu.is_invertible() {
            return Err(Error::Factorization("A_0 - I is singular".into()));
        }
        Ok(MeanPreconditioner { lu })
    }

    /// `(A_0 - I)^{-1} B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if b.ncols() == 0 {
            return b.clone();
        }
        self.lu.solve(b).expect("LU checked invertible at construction")
    }
}

/// The preconditioner specialised to the current state.
#[derive(Clone, Debug)]
pub struct BoundPreconditioner<'p> {
    mean: &'p MeanPreconditioner,
    pub theta0: f64,
    pub sigma: f64,
}

impl BoundPreconditioner<'_> {
    pub fn apply(&self, w: &BlockVec) -> BlockVec {
        let u = self.mean.solve(&w.y.u);
        let v = &w.y.v / (1.0 - self.theta0);
        BlockVec {
            y: LowRankFactor { u, v },
            z: &w.z * ((1.0 - self.theta0) / (2.0 * self.sigma)),
        }
    }
}

/// The Newton system at a fixed state `(Y, theta)`.
pub struct GalerkinOperator<'a> {
    pub family: &'a StochasticMatrixFamily,
    pub tensors: &'a GalerkinTensors,
    pub y: LowRankFactor,
    pub theta: DVector<f64>,
    h_theta: CsrMatrix<f64>,
    pub trunc_tol: f64,
}

impl<'a> GalerkinOperator<'a> {
    pub fn new(
        family: &'a StochasticMatrixFamily,
        tensors: &'a GalerkinTensors,
        y: LowRankFactor,
        theta: DVector<f64>,
        trunc_tol: f64,
    ) -> Result<Self> {
        let (nx, nxi) = (family.n(), tensors.n_modes());
        if y.nrows() != nx || y.ncols() != nxi || theta.len() != nxi {
            return Err(Error::DimensionMismatch(format!(
                "state Y {}x{}, theta {} for N_x = {nx}, N_xi = {nxi}",
                y.nrows(),
                y.ncols(),
                theta.len()
            )));
        }
        if tensors.g.len() != family.a.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices A_k but {} matrices G_k",
                family.a.len(),
                tensors.g.len()
            )));
        }
        let h_theta = tensors.weighted_h(&theta);
        Ok(GalerkinOperator {
            family,
            tensors,
            y,
            theta,
            h_theta,
            trunc_tol,
        })
    }

    pub fn nx(&self) -> usize {
        self.family.n()
    }

    pub fn nxi(&self) -> usize {
        self.tensors.n_modes()
    }

    fn state(&self) -> BlockVec {
        BlockVec {
            y: self.y.clone(),
            z: self.theta.clone(),
        }
    }

    /// Factor pairs of `sum_k A_k S G_k - S H(theta)`.
    fn t_parts(&self, s: &LowRankFactor) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let mut parts = Vec::with_capacity(self.family.a.len() + 2);
        if s.rank() == 0 {
            return parts;
        }
        for (ak, gk) in self.family.a.iter().zip(&self.tensors.g) {
            if ak.nnz() == 0 {
                continue;
            }
            parts.push((ak * &s.u, gk * &s.v));
        }
        parts.push((s.u.clone(), -(&self.h_theta * &s.v)));
        parts
    }

    /// `[trace(H_k Y^T S)]_k`.
    fn coupling_traces(&self, s: &LowRankFactor) -> DVector<f64> {
        if self.y.rank() == 0 || s.rank() == 0 {
            return DVector::zeros(self.nxi());
        }
        let m = &self.y.v * (self.y.u.transpose() * &s.u) * s.v.transpose();
        self.tensors.h_traces(&m)
    }

    /// `F` without truncation of the first block.
    pub fn residual_raw(&self) -> BlockVec {
        let y = LowRankFactor::sum(self.nx(), self.nxi(), &self.t_parts(&self.y));
        let mut d = self.coupling_traces(&self.y);
        d[0] -= 1.0;
        BlockVec { y, z: d }
    }

    pub fn residual(&self) -> BlockVec {
        self.residual_raw().truncate(self.trunc_tol)
    }

    /// Jacobian action without truncation (exactly linear in `s`).
    pub fn jacobian_apply_raw(&self, s: &BlockVec) -> Result<BlockVec> {
        if s.nx() != self.nx() || s.nxi() != self.nxi() {
            return Err(Error::DimensionMismatch(format!(
                "direction of shape ({}, {}) for operator ({}, {})",
                s.nx(),
                s.nxi(),
                self.nx(),
                self.nxi()
            )));
        }
        let mut parts = self.t_parts(&s.y);
        if self.y.rank() > 0 && s.z.iter().any(|&x| x != 0.0) {
            let hz = self.tensors.weighted_h(&s.z);
            parts.push((self.y.u.clone(), -(&hz * &self.y.v)));
        }
        let y = LowRankFactor::sum(self.nx(), self.nxi(), &parts);
        let z = self.coupling_traces(&s.y) * 2.0;
        Ok(BlockVec { y, z })
    }

    pub fn jacobian_apply(&self, s: &BlockVec) -> Result<BlockVec> {
        Ok(self.jacobian_apply_raw(s)?.truncate(self.trunc_tol))
    }

    /// Mode-0 eigenvector coefficient `phi_0`.
    pub fn mean_vector(&self) -> DVector<f64> {
        if self.y.rank() == 0 {
            return DVector::zeros(self.nx());
        }
        &self.y.u * self.y.v.row(0).transpose()
    }

    /// Bind the mean preconditioner to the current `theta_0` and `phi_0`.
    pub fn preconditioner<'p>(&self, mean: &'p MeanPreconditioner) -> Result<BoundPreconditioner<'p>> {
        let theta0 = self.theta[0];
        if (1.0 - theta0).abs() < SINGULAR_GUARD {
            return Err(Error::SingularPreconditioner((1.0 - theta0).abs()));
        }
        let v0 = self.mean_vector();
        let sigma = v0.dot(&mean.solve(&DMatrix::from_column_slice(v0.len(), 1, v0.as_slice())).column(0));
        if !(sigma.abs() >= SCHUR_GUARD) {
            return Err(Error::SchurDegenerate(sigma));
        }
        Ok(BoundPreconditioner { mean, theta0, sigma })
    }

    pub fn precond_apply(&self, mean: &MeanPreconditioner, w: &BlockVec) -> Result<BlockVec> {
        Ok(self.preconditioner(mean)?.apply(w))
    }

    /// Normalization defect `||Q(v)||` of the current state.
    pub fn normalization_defect(&self) -> f64 {
        let mut d = self.coupling_traces(&self.y);
        d[0] -= 1.0;
        d.norm()
    }

    /// The state as a block vector.
    pub fn as_block(&self) -> BlockVec {
        self.state()
    }
}

/// Chaos coefficients of one stochastic eigenpair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenpairExpansion {
    pub lambda: Vec<f64>,
    /// Eigenvector coefficients `Phi = U V^T`, `N_x x N_xi`.
    pub phi_u: Vec<Vec<f64>>,
    pub phi_v: Vec<Vec<f64>>,
    pub m: usize,
    pub r: usize,
    pub ordering: String,
}

impl EigenpairExpansion {
    pub fn new(y: &LowRankFactor, theta: &DVector<f64>, tensors: &GalerkinTensors) -> Self {
        let cols = |mat: &DMatrix<f64>| mat.column_iter().map(|c| c.iter().copied().collect()).collect();
        EigenpairExpansion {
            lambda: theta.iter().copied().collect(),
            phi_u: cols(&y.u),
            phi_v: cols(&y.v),
            m: tensors.basis.m,
            r: tensors.basis.r,
            ordering: tensors.basis.ordering_label().to_string(),
        }
    }

    pub fn rank(&self) -> usize {
        self.phi_u.len()
    }

    pub fn factor(&self) -> LowRankFactor {
        let nx = self.phi_u.first().map_or(0, |c| c.len());
        let nxi = self.lambda.len();
        let r = self.rank();
        let u = DMatrix::from_fn(nx, r, |i, j| self.phi_u[j][i]);
        let v = DMatrix::from_fn(nxi, r, |i, j| self.phi_v[j][i]);
        LowRankFactor { u, v }
    }

    pub fn phi_dense(&self) -> DMatrix<f64> {
        self.factor().to_dense()
    }

    pub fn lambda_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.lambda)
    }

    /// Mean and standard deviation of `lambda(xi)` under the orthonormal basis.
    pub fn lambda_moments(&self) -> (f64, f64) {
        let var: f64 = self.lambda.iter().skip(1).map(|c| c * c).sum();
        (self.lambda[0], var.sqrt())
    }
}
