//! Bilinear (Q1) finite elements on the unit square with homogeneous
//! Dirichlet conditions, and the stochastic stiffness family
//! `A(xi) = A_0 + sum_k xi_k A_k` built from the KLE coefficient field.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kle::KleMode2D;

/// Uniform tensor-product mesh of `(0, 1)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub n_elem: usize,
}

impl Mesh {
    pub fn new(n_elem: usize) -> Result<Self> {
        if n_elem < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 elements per side, got {n_elem}"
            )));
        }
        Ok(Mesh { n_elem })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_elem as f64
    }

    /// Number of interior (unknown) nodes, `(n_elem - 1)^2`.
    pub fn n_interior(&self) -> usize {
        (self.n_elem - 1).pow(2)
    }

    /// Unknown index of grid node `(i, j)`, or `None` on the boundary.
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.n_elem;
        if i == 0 || j == 0 || i >= n || j >= n {
            None
        } else {
            Some((j - 1) * (n - 1) + (i - 1))
        }
    }

    /// Physical coordinates of unknown `dof`.
    pub fn coords(&self, dof: usize) -> (f64, f64) {
        let n = self.n_elem - 1;
        let (i, j) = (dof % n + 1, dof / n + 1);
        (i as f64 * self.h(), j as f64 * self.h())
    }
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
// reference corners, counter-clockwise from (-1, -1)
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Local 4x4 stiffness of the element with lower-left corner `(x0, y0)` and
/// side `h`, using 2x2 Gauss quadrature. Nodes are ordered counter-clockwise
/// from the lower-left corner.
pub fn element_stiffness(h: f64, x0: f64, y0: f64, coef: &impl Fn(f64, f64) -> f64) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    // d(xi)/dx = 2/h, det J = h^2/4, unit Gauss weights
    let scale = 2.0 / h;
    let det = h * h / 4.0;
    for &gx in &GAUSS2 {
        for &gy in &GAUSS2 {
            let x = x0 + 0.5 * h * (gx + 1.0);
            let y = y0 + 0.5 * h * (gy + 1.0);
            let a = coef(x, y);
            let mut grads = [(0.0, 0.0); 4];
            for (n, &(cx, cy)) in CORNERS.iter().enumerate() {
                grads[n] = (
                    0.25 * cx * (1.0 + cy * gy) * scale,
                    0.25 * cy * (1.0 + cx * gx) * scale,
                );
            }
            for p in 0..4 {
                for q in 0..4 {
                    k[p][q] += a * det * (grads[p].0 * grads[q].0 + grads[p].1 * grads[q].1);
                }
            }
        }
    }
    k
}

/// Global stiffness for `-div(a grad u)` with Dirichlet rows and columns removed.
pub fn assemble_stiffness(mesh: &Mesh, coef: impl Fn(f64, f64) -> f64) -> CsrMatrix<f64> {
    let n = mesh.n_elem;
    let h = mesh.h();
    let nd = mesh.n_interior();
    let mut coo = CooMatrix::new(nd, nd);
    for ej in 0..n {
        for ei in 0..n {
            let ke = element_stiffness(h, ei as f64 * h, ej as f64 * h, &coef);
            let nodes = [(ei, ej), (ei + 1, ej), (ei + 1, ej + 1), (ei, ej + 1)];
            let dofs = nodes.map(|(i, j)| mesh.dof(i, j));
            for p in 0..4 {
                let Some(gp) = dofs[p] else { continue };
                for q in 0..4 {
                    if let Some(gq) = dofs[q] {
                        coo.push(gp, gq, ke[p][q]);
                    }
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// The matrices `A_0, ..., A_m` of the affine stochastic stiffness.
#[derive(Clone, Debug)]
pub struct StochasticMatrixFamily {
    pub a: Vec<CsrMatrix<f64>>,
    pub sigma_a: f64,
    pub mesh: Mesh,
    /// Two-dimensional KLE eigenvalues `gamma_1..gamma_m`.
    pub kle_eigenvalues: Vec<f64>,
}

impl StochasticMatrixFamily {
    /// Number of random variables.
    pub fn m(&self) -> usize {
        self.a.len() - 1
    }

    /// Number of spatial unknowns `N_x`.
    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    /// Dense realization `A_0 + sum_k xi_k A_k`.
    pub fn realize(&self, xi: &[f64]) -> DMatrix<f64> {
        assert_eq!(xi.len(), self.m());
        let mut out = DMatrix::from(&self.a[0]);
        for (k, &x) in xi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, j, v) in self.a[k + 1].triplet_iter() {
                out[(i, j)] += x * v;
            }
        }
        out
    }

    /// Sorted eigenvalues and eigenvectors (columns) of the mean matrix `A_0`.
    pub fn mean_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_symmetric_eigen(DMatrix::from(&self.a[0]))
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sorted_symmetric_eigen(mat: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Assemble `A_0` from the constant mean `mean_coef` and `A_k` from
/// `sigma_a sqrt(gamma_k) theta_k`, with the KLE eigenfunctions evaluated at
/// `(2x - 1, 2y - 1)` so that the unit square maps onto `[-1, 1]^2`.
pub fn assemble_family(
    mesh: &Mesh,
    kle: &[KleMode2D],
    sigma_a: f64,
    mean_coef: f64,
) -> Result<StochasticMatrixFamily> {
    if !(sigma_a >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_a must be >= 0, got {sigma_a}")));
    }
    let mut a = Vec::with_capacity(kle.len() + 1);
    a.push(assemble_stiffness(mesh, |_, _| mean_coef));
    for mode in kle {
        let amp = sigma_a * mode.eigenvalue.sqrt();
        a.push(assemble_stiffness(mesh, |x, y| {
            amp * mode.eval(2.0 * x - 1.0, 2.0 * y - 1.0)
        }));
    }
    Ok(StochasticMatrixFamily {
        a,
        sigma_a,
        mesh: *mesh,
        kle_eigenvalues: kle.iter().map(|md| md.eigenvalue).collect(),
    })
}

/// Write a sparse matrix in MatrixMarket coordinate format (1-based indices).
pub fn write_matrix_market<W: Write>(mut out: W, mat: &CsrMatrix<f64>, comment: &str) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    for line in comment.lines() {
        writeln!(out, "% {line}")?;
    }
    writeln!(out, "{} {} {}", mat.nrows(), mat.ncols(), mat.nnz())?;
    for (i, j, v) in mat.triplet_iter() {
        writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    Ok(())
}
