//! Brute-force references: the Galerkin system assembled with explicit
//! Kronecker products, full Newton with direct solves, Monte Carlo sampling of
//! the random spectrum and density estimates of a chaos expansion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::StochasticMatrixFamily;
use crate::pce::{GalerkinTensors, MultiIndexSet};

/// Largest `N_x N_xi` the dense routines accept.
pub const DENSE_LIMIT: usize = 10_000;

fn guard(nx: usize, nxi: usize) -> Result<()> {
    let size = nx * nxi;
    if size > DENSE_LIMIT {
        return Err(Error::SizeGuard { size, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Dense Kronecker-form Galerkin data for one problem.
pub struct DenseGalerkinSystem {
    pub nx: usize,
    pub nxi: usize,
    /// `sum_k G_k (x) A_k`.
    pub a: DMatrix<f64>,
    /// `H_k (x) I` for every chaos mode.
    pub h_kron: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
}

impl DenseGalerkinSystem {
    pub fn new(family: &StochasticMatrixFamily, tensors: &GalerkinTensors) -> Result<Self> {
        let (nx, nxi) = (family.n(), tensors.n_modes());
        guard(nx, nxi)?;
        let mut a = DMatrix::zeros(nx * nxi, nx * nxi);
        for (ak, gk) in family.a.iter().zip(&tensors.g) {
            a += DMatrix::from(gk).kronecker(&DMatrix::from(ak));
        }
        let eye = DMatrix::<f64>::identity(nx, nx);
        let h: Vec<DMatrix<f64>> = tensors.h.iter().map(DMatrix::from).collect();
        let h_kron = h.iter().map(|hk| hk.kronecker(&eye)).collect();
        Ok(DenseGalerkinSystem { nx, nxi, a, h_kron, h })
    }

    pub fn dim(&self) -> usize {
        (self.nx + 1) * self.nxi
    }

    /// `T(theta) = sum_k [G_k (x) A_k - theta_k H_k (x) I]`.
    pub fn t(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut t = self.a.clone();
        for (k, hk) in self.h_kron.iter().enumerate() {
            if theta[k] != 0.0 {
                t -= hk * theta[k];
            }
        }
        t
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.nx * self.nxi;
        (x.rows(0, n).into_owned(), x.rows(n, self.nxi).into_owned())
    }

    /// Stacked residual `[T(theta) v; Q(v)]`.
    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let (v, theta) = self.split(x);
        let top = self.t(&theta) * &v;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, top.len()).copy_from(&top);
        for k in 0..self.nxi {
            let q = v.dot(&(&self.h_kron[k] * &v)) - if k == 0 { 1.0 } else { 0.0 };
            out[top.len() + k] = q;
        }
        out
    }

    /// Block Jacobian `[[T(theta), T'(theta) v], [Q'(v), 0]]` with
    /// `T'(theta) v = -sum_k H_k (x) v_k` and `Q'(v) = 2 sum_k H_k (x) v_k^T`.
    pub fn j(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (v, theta) = self.split(x);
        let n = self.nx * self.nxi;
        let mut jac = DMatrix::zeros(self.dim(), self.dim());
        jac.view_mut((0, 0), (n, n)).copy_from(&self.t(&theta));
        let mut tprime = DMatrix::zeros(n, self.nxi);
        let mut qprime = DMatrix::zeros(self.nxi, n);
        for k in 0..self.nxi {
            let vk = v.rows(k * self.nx, self.nx).into_owned();
            tprime -= self.h[k].kronecker(&vk);
            qprime += self.h[k].kronecker(&vk.transpose()) * 2.0;
        }
        jac.view_mut((0, n), (n, self.nxi)).copy_from(&tprime);
        jac.view_mut((n, 0), (self.nxi, n)).copy_from(&qprime);
        jac
    }

    /// Dense `blkdiag((1 - theta_0) I (x) (A_0 - I), S_0)` with
    /// `S_0 = 2 / (1 - theta_0) * v_0^T (A_0 - I)^{-1} v_0 * I`.
    pub fn mean_preconditioner(&self, a0: &DMatrix<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (v, theta) = self.split(x);
        let n = self.nx * self.nxi;
        let shifted = a0 - DMatrix::identity(self.nx, self.nx);
        let v0 = v.rows(0, self.nx).into_owned();
        let w = shifted
            .clone()
            .lu()
            .solve(&v0)
            .ok_or_else(|| Error::Factorization("A_0 - I".into()))?;
        let s0 = 2.0 / (1.0 - theta[0]) * v0.dot(&w);
        let mut p = DMatrix::zeros(self.dim(), self.dim());
        let block = DMatrix::<f64>::identity(self.nxi, self.nxi).kronecker(&shifted) * (1.0 - theta[0]);
        p.view_mut((0, 0), (n, n)).copy_from(&block);
        for k in 0..self.nxi {
            p[(n + k, n + k)] = s0;
        }
        Ok(p)
    }
}

/// Stack `Y` (column-major) and `theta` into one vector.
pub fn stack(y: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(y.len() + theta.len());
    out.rows_mut(0, y.len()).copy_from_slice(y.as_slice());
    out.rows_mut(y.len(), theta.len()).copy_from(theta);
    out
}

pub fn unstack(x: &DVector<f64>, nx: usize, nxi: usize) -> (DMatrix<f64>, DVector<f64>) {
    let y = DMatrix::from_column_slice(nx, nxi, &x.as_slice()[..nx * nxi]);
    let theta = DVector::from_column_slice(&x.as_slice()[nx * nxi..]);
    (y, theta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseNewtonResult {
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

impl DenseNewtonResult {
    pub fn y_matrix(&self, nx: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(nx, self.theta.len(), &self.y)
    }
}

/// Full Newton with LU solves from the stacked start `x0`.
pub fn dense_newton(
    sys: &DenseGalerkinSystem,
    x0: &DVector<f64>,
    tol: f64,
    max_steps: usize,
) -> Result<DenseNewtonResult> {
    let mut x = x0.clone();
    let mut f = sys.f(&x);
    let mut hist = vec![f.norm()];
    for step in 0..max_steps {
        if f.norm() <= tol {
            break;
        }
        let s = sys
            .j(&x)
            .lu()
            .solve(&(-&f))
            .ok_or(Error::SingularJacobian(step))?;
        x += s;
        f = sys.f(&x);
        if !f.norm().is_finite() {
            return Err(Error::NonFinite("dense Newton residual"));
        }
        hist.push(f.norm());
    }
    let (y, theta) = unstack(&x, sys.nx, sys.nxi);
    Ok(DenseNewtonResult {
        y: y.as_slice().to_vec(),
        theta: theta.iter().copied().collect(),
        converged: f.norm() <= tol,
        residual_history: hist,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Normalized so that `sum density * width = 1`.
    pub density: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(samples: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let i = (((s - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = samples.len().max(1) as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    Histogram { edges, density, counts }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McSummary {
    pub eigen_index: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub histogram: Histogram,
}

impl McSummary {
    fn from_samples(eigen_index: usize, seed: u64, samples: Vec<f64>, bins: usize) -> Self {
        let (mean, std) = mean_std(&samples);
        let n = samples.len();
        McSummary {
            eigen_index,
            n_samples: n,
            seed,
            mean,
            std,
            stderr: std / (n as f64).sqrt(),
            histogram: histogram(&samples, bins),
            samples,
        }
    }
}

/// Uniform `xi` in `[-1, 1]^m` for sample `i`; each sample has its own stream.
pub fn sample_xi(seed: u64, i: usize, m: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// The `eigen_index`-th smallest (1-based) eigenvalue of `A(xi)` over
/// `n_samples` uniform draws.
pub fn mc_eigen_sample(
    family: &StochasticMatrixFamily,
    eigen_index: usize,
    n_samples: usize,
    seed: u64,
) -> Result<McSummary> {
    if eigen_index == 0 || eigen_index > family.n() {
        return Err(Error::InvalidArgument(format!(
            "eigen index {eigen_index} outside 1..={}",
            family.n()
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let samples: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let xi = sample_xi(seed, i, family.m());
            let mut ev: Vec<f64> = family.realize(&xi).symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| a.total_cmp(b));
            ev[eigen_index - 1]
        })
        .collect();
    Ok(McSummary::from_samples(eigen_index, seed, samples, 50))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdfData {
    pub n_samples: usize,
    pub mean: f64,
    pub std: f64,
    pub bandwidth: f64,
    /// Set when every sample has the same value.
    pub point_mass: Option<f64>,
    pub histogram: Histogram,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl PdfData {
    /// Trapezoid integral of the kernel density.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Gaussian kernel density with Silverman's bandwidth on `n_grid` points.
pub fn kde(samples: &[f64], n_grid: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let (_, std) = mean_std(samples);
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| sorted[((p * (n - 1.0)).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * n.powf(-0.2);
    if !(h > 0.0) {
        return (0.0, Vec::new(), Vec::new());
    }
    let lo = sorted[0] - 6.0 * h;
    let hi = sorted[sorted.len() - 1] + 6.0 * h;
    let dx = (hi - lo) / (n_grid - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + dx * i as f64).collect();
    let density = grid
        .par_iter()
        .map(|&g| {
            sorted
                .iter()
                .map(|&s| (-0.5 * ((g - s) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    (h, grid, density)
}

/// Sample `lambda(xi) = sum_k lambda_k psi_k(xi)` and estimate its density.
pub fn pdf_from_expansion(
    lambda: &[f64],
    basis: &MultiIndexSet,
    n_samples: usize,
    bins: usize,
    seed: u64,
) -> Result<PdfData> {
    if lambda.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a basis of {}",
            lambda.len(),
            basis.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let coeffs = DVector::from_column_slice(lambda);
    let samples: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| basis.evaluate(&sample_xi(seed, i, basis.m)).dot(&coeffs))
        .collect();
    let (mean, std) = mean_std(&samples);
    let first = samples[0];
    let point_mass = samples.iter().all(|&s| s == first).then_some(first);
    let (bandwidth, grid, density) = if point_mass.is_some() {
        (0.0, Vec::new(), Vec::new())
    } else {
        kde(&samples, 256)
    };
    Ok(PdfData {
        n_samples,
        mean,
        std,
        bandwidth,
        point_mass,
        histogram: histogram(&samples, bins),
        grid,
        density,
    })
}
