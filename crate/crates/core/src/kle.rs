//! Analytic Karhunen-Loeve expansion of the separable exponential covariance
//! `exp(-|x1 - y1| / l1 - |x2 - y2| / l2)` on `[-a, a]^2`.
//!
//! In one dimension the eigenfunctions are `cos(w x)` (even branch, roots of
//! `c - w tan(w a) = 0`) and `sin(w x)` (odd branch, roots of
//! `w + c tan(w a) = 0`), with `c = 1 / l` and eigenvalues `2c / (w^2 + c^2)`.
//! Two-dimensional modes are products of one-dimensional ones.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// One eigenpair of the one-dimensional exponential kernel.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KleMode1D {
    pub omega: f64,
    pub eigenvalue: f64,
    pub parity: Parity,
    /// Multiplier making the eigenfunction unit-norm in `L2(-a, a)`.
    pub norm: f64,
    pub half_width: f64,
}

impl KleMode1D {
    pub fn eval(&self, x: f64) -> f64 {
        match self.parity {
            Parity::Even => self.norm * (self.omega * x).cos(),
            Parity::Odd => self.norm * (self.omega * x).sin(),
        }
    }

    /// Residual of the transcendental relation defining `omega`.
    pub fn residual(&self, c: f64) -> f64 {
        let t = (self.omega * self.half_width).tan();
        match self.parity {
            Parity::Even => c - self.omega * t,
            Parity::Odd => self.omega + c * t,
        }
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, branch: &'static str) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::RootBracket { branch, lo, hi });
    }
    let mut flo = flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `n_modes` largest eigenpairs of `exp(-c |x - y|)` on `[-a, a]`, sorted by
/// decreasing eigenvalue.
pub fn kle_1d(c: f64, a: f64, n_modes: usize) -> Result<Vec<KleMode1D>> {
    if !(c > 0.0) || !(a > 0.0) || n_modes == 0 {
        return Err(Error::InvalidArgument(format!(
            "kle_1d needs c > 0, a > 0, n_modes >= 1 (got c = {c}, a = {a}, n = {n_modes})"
        )));
    }
    let per_branch = n_modes / 2 + 1;
    let mut modes = Vec::with_capacity(2 * per_branch);
    for n in 0..per_branch {
        // even root in [n pi / a, (n + 1/2) pi / a]
        let (lo, hi) = (n as f64 * PI / a, (n as f64 + 0.5) * PI / a);
        let g = |w: f64| c * (w * a).cos() - w * (w * a).sin();
        let omega = bisect(g, lo, hi, "even")?;
        let norm = 1.0 / (a + (2.0 * omega * a).sin() / (2.0 * omega)).sqrt();
        modes.push(KleMode1D {
            omega,
            eigenvalue: 2.0 * c / (omega * omega + c * c),
            parity: Parity::Even,
            norm,
            half_width: a,
        });

        // odd root in [(n + 1/2) pi / a, (n + 1) pi / a]
        let (lo, hi) = ((n as f64 + 0.5) * PI / a, (n as f64 + 1.0) * PI / a);
        let h = |w: f64| w * (w * a).cos() + c * (w * a).sin();
        let omega = bisect(h, lo, hi, "odd")?;
        let norm = 1.0 / (a - (2.0 * omega * a).sin() / (2.0 * omega)).sqrt();
        modes.push(KleMode1D {
            omega,
            eigenvalue: 2.0 * c / (omega * omega + c * c),
            parity: Parity::Odd,
            norm,
            half_width: a,
        });
    }
    modes.sort_by(|p, q| q.eigenvalue.total_cmp(&p.eigenvalue));
    modes.truncate(n_modes);
    Ok(modes)
}

/// Product mode `f_i(x) g_j(y)` of the separable two-dimensional kernel.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KleMode2D {
    pub eigenvalue: f64,
    /// Zero-based positions of the factors in their one-dimensional lists.
    pub factors: (usize, usize),
    pub mode_x: KleMode1D,
    pub mode_y: KleMode1D,
}

impl KleMode2D {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.mode_x.eval(x) * self.mode_y.eval(y)
    }
}

/// The `m` largest products of one-dimensional modes, descending, ties broken
/// by the lower index pair.
pub fn kle_2d(modes_x: &[KleMode1D], modes_y: &[KleMode1D], m: usize) -> Result<Vec<KleMode2D>> {
    let available = modes_x.len().min(modes_y.len());
    if available < m {
        return Err(Error::InsufficientModes { needed: m, available });
    }
    let mut all = Vec::with_capacity(modes_x.len() * modes_y.len());
    for (i, fx) in modes_x.iter().enumerate() {
        for (j, fy) in modes_y.iter().enumerate() {
            all.push(KleMode2D {
                eigenvalue: fx.eigenvalue * fy.eigenvalue,
                factors: (i, j),
                mode_x: *fx,
                mode_y: *fy,
            });
        }
    }
    all.sort_by(|p, q| {
        q.eigenvalue
            .total_cmp(&p.eigenvalue)
            .then(p.factors.cmp(&q.factors))
    });
    all.truncate(m);
    Ok(all)
}
