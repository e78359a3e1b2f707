//! Right-preconditioned BiCGstab on [`BlockVec`]s with recompression after
//! every operator application, preconditioner application and vector update.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{BlockVec, LowRankFactor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub trunc_tol: f64,
    pub use_preconditioner: bool,
    pub record_history: bool,
    /// Seed of the shadow vector drawn after a breakdown.
    pub seed: u64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            rel_tol: 1e-5,
            max_iter: 200,
            trunc_tol: 1e-6,
            use_preconditioner: true,
            record_history: true,
            seed: 0,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config(format!("krylov rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if !(self.trunc_tol > 0.0 && self.trunc_tol <= self.rel_tol) {
            return Err(Error::Config(format!(
                "trunc_tol must lie in (0, rel_tol], got {} with rel_tol {}",
                self.trunc_tol, self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("krylov max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HistoryEntry {
    pub iter: usize,
    pub relres: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct KrylovReport {
    pub iterations: usize,
    /// `||b - op(x)|| / ||b||`, recomputed from the returned iterate.
    pub relres: f64,
    pub converged: bool,
    pub breakdown: bool,
    pub restarts: usize,
    pub peak_rank: usize,
    pub history: Vec<HistoryEntry>,
}

impl KrylovReport {
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,relres,rank")?;
        for h in &self.history {
            writeln!(out, "{},{:.17e},{}", h.iter, h.relres, h.rank)?;
        }
        Ok(())
    }
}

fn finite(x: &BlockVec, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn random_shadow(rng: &mut ChaCha8Rng, nx: usize, nxi: usize) -> BlockVec {
    let u = DMatrix::from_fn(nx, 1, |_, _| rng.random_range(-1.0..1.0));
    let v = DMatrix::from_fn(nxi, 1, |_, _| rng.random_range(-1.0..1.0));
    let z = DVector::from_fn(nxi, |_, _| rng.random_range(-1.0..1.0));
    BlockVec { y: LowRankFactor { u, v }, z }
}

/// Solve `op(x) = b`. `pc` is applied on the right, so the residual monitored
/// is that of the original system.
pub fn bicgstab<Op, Pc>(op: Op, pc: Pc, b: &BlockVec, x0: &BlockVec, cfg: &KrylovConfig) -> Result<(BlockVec, KrylovReport)>
where
    Op: Fn(&BlockVec) -> Result<BlockVec>,
    Pc: Fn(&BlockVec) -> Result<BlockVec>,
{
    let eps = cfg.trunc_tol;
    let mut report = KrylovReport::default();
    let bnorm = b.norm();
    if !bnorm.is_finite() {
        return Err(Error::NonFinite("right-hand side"));
    }
    if bnorm == 0.0 {
        report.converged = true;
        return Ok((BlockVec::zeros(b.nx(), b.nxi()), report));
    }

    let apply = |x: &BlockVec| -> Result<BlockVec> {
        let y = op(x)?.truncate(eps);
        finite(&y, "operator application")?;
        Ok(y)
    };
    let precond = |x: &BlockVec| -> Result<BlockVec> {
        let y = pc(x)?.truncate(eps);
        finite(&y, "preconditioner application")?;
        Ok(y)
    };
    let true_residual = |x: &BlockVec| -> Result<BlockVec> { Ok(b.axpy(-1.0, &apply(x)?)?.truncate(eps)) };

    let mut peak = b.rank();
    let mut track = |v: &BlockVec| peak = peak.max(v.rank());

    let mut x = x0.truncate(eps);
    let mut r = true_residual(&x)?;
    let mut shadow = r.clone();
    let mut rho: f64 = 1.0;
    let mut alpha: f64 = 1.0;
    let mut omega: f64 = 1.0;
    let mut p = BlockVec::zeros(b.nx(), b.nxi());
    let mut v = BlockVec::zeros(b.nx(), b.nxi());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut replacements = 0usize;

    let x0_trunc = x.clone();
    let x0_rel = r.norm() / bnorm;
    let mut best = (x0_rel, x.clone());
    if cfg.record_history {
        report.history.push(HistoryEntry { iter: 0, relres: best.0, rank: x.rank() });
    }

    let restart = |x: &BlockVec, random: bool, rng: &mut ChaCha8Rng| -> Result<(BlockVec, BlockVec)> {
        let r = true_residual(x)?;
        let shadow = if random { random_shadow(rng, b.nx(), b.nxi()) } else { r.clone() };
        Ok((r, shadow))
    };

    let mut iter = 0;
    let mut converged = best.0 <= cfg.rel_tol;
    while !converged && iter < cfg.max_iter {
        iter += 1;
        let scale = shadow.norm() * r.norm();
        let rho_new = shadow.dot(&r)?;
        let mut broke = rho_new.abs() < 1e-14 * scale || omega.abs() < 1e-14;
        let mut step_done = false;
        if !broke {
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            p = r.axpy(beta, &p.axpy(-omega, &v)?)?.truncate(eps);
            let phat = precond(&p)?;
            v = apply(&phat)?;
            let sv = shadow.dot(&v)?;
            if sv.abs() < 1e-14 * shadow.norm() * v.norm() || sv == 0.0 {
                broke = true;
            } else {
                alpha = rho / sv;
                let h = x.axpy(alpha, &phat)?.truncate(eps);
                let s = r.axpy(-alpha, &v)?.truncate(eps);
                track(&p);
                track(&v);
                track(&s);
                if s.norm() / bnorm <= cfg.rel_tol {
                    x = h;
                    r = s;
                    step_done = true;
                } else {
                    let shat = precond(&s)?;
                    let t = apply(&shat)?;
                    let tt = t.dot(&t)?;
                    if tt == 0.0 {
                        x = h;
                        r = s;
                        broke = true;
                    } else {
                        omega = t.dot(&s)? / tt;
                        x = h.axpy(omega, &shat)?.truncate(eps);
                        r = s.axpy(-omega, &t)?.truncate(eps);
                        track(&t);
                        step_done = true;
                    }
                }
            }
        }
        finite(&x, "iterate")?;
        track(&x);
        track(&r);

        if step_done {
            let rel = r.norm() / bnorm;
            if cfg.record_history {
                report.history.push(HistoryEntry { iter, relres: rel, rank: x.rank() });
            }
            if rel < best.0 {
                best = (rel, x.clone());
            }
            if rel <= cfg.rel_tol {
                // the recursively updated residual drifts under truncation
                let rt = true_residual(&x)?;
                let true_rel = rt.norm() / bnorm;
                if true_rel <= cfg.rel_tol || replacements >= 3 {
                    converged = true;
                    r = rt;
                } else {
                    replacements += 1;
                    r = rt;
                    shadow = r.clone();
                    rho = 1.0;
                    alpha = 1.0;
                    omega = 1.0;
                    p = BlockVec::zeros(b.nx(), b.nxi());
                    v = BlockVec::zeros(b.nx(), b.nxi());
                }
            }
        }
        if broke {
            if report.restarts == 0 {
                report.restarts += 1;
                let (r_new, shadow_new) = restart(&x, true, &mut rng)?;
                r = r_new;
                shadow = shadow_new;
                rho = 1.0;
                alpha = 1.0;
                omega = 1.0;
                p = BlockVec::zeros(b.nx(), b.nxi());
                v = BlockVec::zeros(b.nx(), b.nxi());
            } else {
                report.breakdown = true;
                break;
            }
        }
    }

    // return the best iterate seen, judged by its true residual; the starting
    // guess is always a candidate
    let final_rel = true_residual(&x)?.norm() / bnorm;
    let (mut x, mut rel) = (x, final_rel);
    if !converged {
        let best_rel = true_residual(&best.1)?.norm() / bnorm;
        if best_rel < rel {
            (x, rel) = (best.1, best_rel);
        }
        if x0_rel < rel {
            (x, rel) = (x0_trunc, x0_rel);
        }
    }
    report.iterations = iter;
    report.relres = rel;
    report.converged = rel <= cfg.rel_tol;
    report.peak_rank = peak;
    Ok((x, report))
}
