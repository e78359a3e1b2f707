//! Command implementations shared by the CLI, and their output files.
//!
//! Every file starts with (CSV) or contains (JSON) the config hash.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Problem, RunConfig};
use crate::error::{Error, Result};
use crate::fem::write_matrix_market;
use crate::newton::{inbm_solve, initial_guess, NewtonTrace, RunSummary};
use crate::operator::EigenpairExpansion;
use crate::oracle::{
    dense_newton, mc_eigen_sample, pdf_from_expansion, stack, DenseGalerkinSystem, McSummary, PdfData,
};
use crate::pce::MultiIndexSet;

pub const MEMORY_FORMULA: &str = "mem_lr_kb = 8 * R * (N_x + N_xi) / 1024; mem_dense_kb = 8 * N_x * N_xi / 1024";
pub const DOMAIN_MAPPING: &str =
    "xi_k independent uniform on [-1, 1]; psi_j products of Legendre polynomials normalized to unit variance";
pub const EIGEN_TRACKING: &str = "samples sorted ascending; the eigen_index-th value is taken (order statistic)";

/// Writes self-describing files into one directory.
pub struct OutputWriter {
    dir: PathBuf,
    hash: String,
    files: Vec<PathBuf>,
}

impl OutputWriter {
    pub fn new(dir: &Path, hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = BufWriter::new(File::create(&path)?);
        self.files.push(path);
        Ok(f)
    }

    /// CSV with `# key=value` comment lines ahead of the header row.
    pub fn csv<F>(&mut self, name: &str, comments: &[String], body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let hash = self.hash.clone();
        let mut out = self.create(name)?;
        writeln!(out, "# config_hash={hash}")?;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut v {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut out = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, &v)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn matrix_csv(&mut self, name: &str, what: &str, mat: &DMatrix<f64>) -> Result<()> {
        let comments = vec![what.to_string(), format!("shape={}x{}", mat.nrows(), mat.ncols())];
        self.csv(name, &comments, |out| {
            for row in mat.row_iter() {
                let line: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
                writeln!(out, "{}", line.join(","))?;
            }
            Ok(())
        })
    }
}

fn multi_index_label(basis: &MultiIndexSet, k: usize) -> String {
    basis.indices[k].0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
}

/// Result of one INBM run, converged or not.
pub struct Solution {
    pub expansion: EigenpairExpansion,
    pub trace: NewtonTrace,
    pub summary: RunSummary,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// Run INBM; a run that stops early still yields its last iterate.
pub fn solve_problem(cfg: &RunConfig, problem: &Problem) -> Result<Solution> {
    let (expansion, trace) = match inbm_solve(&problem.family, &problem.tensors, &cfg.newton) {
        Ok(ok) => ok,
        Err(Error::NotConverged { mut trace, .. }) => {
            let last = trace.last_iterate.take().expect("non-converged trace keeps its iterate");
            (last, *trace)
        }
        Err(e) => return Err(e),
    };
    let summary = RunSummary::new(
        &trace,
        expansion.rank(),
        problem.family.n(),
        problem.tensors.n_modes(),
    );
    Ok(Solution { expansion, trace, summary })
}

/// Coefficients, factors, trace, metrics and metadata of a solve.
pub fn write_solution(out: &mut OutputWriter, cfg: &RunConfig, problem: &Problem, sol: &Solution) -> Result<()> {
    let basis = &problem.tensors.basis;
    let e = &sol.expansion;
    let comments = vec![
        format!("eigen_index={}", cfg.newton.eigen_index),
        format!("ordering={}", e.ordering),
        format!("converged={}", sol.converged()),
    ];
    out.csv("coefficients.csv", &comments, |w| {
        writeln!(w, "k,lambda_k,multi_index")?;
        for (k, l) in e.lambda.iter().enumerate() {
            writeln!(w, "{k},{l:.17e},{}", multi_index_label(basis, k))?;
        }
        Ok(())
    })?;
    let factor = e.factor();
    out.matrix_csv("phi_u.csv", "left factor U of Phi = U V^T, rows = spatial dofs", &factor.u)?;
    out.matrix_csv("phi_v.csv", "right factor V of Phi = U V^T, rows = chaos modes", &factor.v)?;
    if cfg.write_dense_phi {
        out.matrix_csv("phi_dense.csv", "Phi, rows = spatial dofs, columns = chaos modes", &factor.to_dense())?;
    }
    let mut buf = Vec::new();
    sol.trace
        .write_csv(&mut buf, &format!("initial_norm_f={:.17e}\ntolerance={:.17e}", sol.trace.initial_norm_f, sol.trace.tolerance))?;
    out.csv("trace.csv", &[], |w| {
        w.write_all(&buf)?;
        Ok(())
    })?;
    let (mean, std) = e.lambda_moments();
    out.json(
        "metrics.json",
        &json!({
            "summary": sol.summary,
            "stop_reason": sol.trace.stop_reason,
            "lambda_mean": mean,
            "lambda_std": std,
            "memory_formula": MEMORY_FORMULA,
        }),
    )?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    out.json(
        "metadata.json",
        &json!({
            "config": cfg,
            "config_hash_input": "canonical JSON of the config with output_dir cleared",
            "basis_ordering": basis.ordering_label(),
            "multi_indices": (0..basis.len()).map(|k| multi_index_label(basis, k)).collect::<Vec<_>>(),
            "domain_mapping": DOMAIN_MAPPING,
            "n_x": problem.family.n(),
            "n_xi": problem.tensors.n_modes(),
            "mean_eigenvalues": problem.family.mean_eigen().0.iter().take(8).copied().collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "created_unix": created,
        }),
    )?;
    Ok(())
}

pub fn cmd_solve(cfg: &RunConfig, dir: &Path) -> Result<(Solution, Vec<PathBuf>)> {
    let problem = cfg.build()?;
    let sol = solve_problem(cfg, &problem)?;
    let mut out = OutputWriter::new(dir, &cfg.hash())?;
    write_solution(&mut out, cfg, &problem, &sol)?;
    Ok((sol, out.files().to_vec()))
}

/// Relative deviations between two solutions, `Phi` compared up to sign.
#[derive(Clone, Debug, Serialize)]
pub struct Deviation {
    pub lambda_rel: f64,
    pub phi_rel: f64,
}

pub fn deviation(lambda: &[f64], phi: &DMatrix<f64>, lambda_ref: &[f64], phi_ref: &DMatrix<f64>) -> Deviation {
    let l = DVector::from_column_slice(lambda);
    let lr = DVector::from_column_slice(lambda_ref);
    let sign = if phi.dot(phi_ref) < 0.0 { -1.0 } else { 1.0 };
    Deviation {
        lambda_rel: (&l - &lr).norm() / lr.norm(),
        phi_rel: (phi * sign - phi_ref).norm() / phi_ref.norm(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub n_x: usize,
    pub n_xi: usize,
    pub lowrank_converged: bool,
    pub lowrank_norm_f: f64,
    pub lowrank_stop_reason: Option<String>,
    pub lowrank_ins: usize,
    pub dense_converged: bool,
    pub dense_residual_history: Vec<f64>,
    pub deviation: Deviation,
    pub lambda_lowrank: Vec<f64>,
    pub lambda_dense: Vec<f64>,
}

impl CompareReport {
    pub fn converged(&self) -> bool {
        self.lowrank_converged && self.dense_converged
    }
}

/// Dense Newton tolerance used by the oracle.
pub const DENSE_TOL: f64 = 1e-12;

/// Low-rank INBM against dense Newton from the same starting state.
pub fn oracle_compare(cfg: &RunConfig, problem: &Problem) -> Result<CompareReport> {
    let sys = DenseGalerkinSystem::new(&problem.family, &problem.tensors)?;
    let (y0, theta0) = initial_guess(&cfg.newton, &problem.family, problem.tensors.n_modes())?;
    let dense = dense_newton(&sys, &stack(&y0.to_dense(), &theta0), DENSE_TOL, cfg.newton.max_steps)?;
    let sol = solve_problem(cfg, problem)?;
    let deviation = deviation(
        &sol.expansion.lambda,
        &sol.expansion.phi_dense(),
        &dense.theta,
        &dense.y_matrix(sys.nx),
    );
    Ok(CompareReport {
        n_x: sys.nx,
        n_xi: sys.nxi,
        lowrank_converged: sol.converged(),
        lowrank_norm_f: sol.trace.final_norm_f,
        lowrank_stop_reason: sol.trace.stop_reason.clone(),
        lowrank_ins: sol.trace.ins(),
        dense_converged: dense.converged,
        dense_residual_history: dense.residual_history,
        deviation,
        lambda_lowrank: sol.expansion.lambda.clone(),
        lambda_dense: dense.theta,
    })
}

pub fn cmd_oracle_compare(cfg: &RunConfig, dir: &Path) -> Result<CompareReport> {
    let problem = cfg.build()?;
    let report = oracle_compare(cfg, &problem)?;
    let mut out = OutputWriter::new(dir, &cfg.hash())?;
    out.json("compare.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct McReport {
    pub eigen_index: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub solve_converged: bool,
    pub pce_mean: f64,
    pub pce_std: f64,
    pub mc_mean: f64,
    pub mc_std: f64,
    pub mc_stderr: f64,
    /// `(mc_mean - pce_mean) / mc_stderr`.
    pub z_mean: f64,
    /// `|pce_std - mc_std| / mc_std`.
    pub std_rel_dev: f64,
    pub tracking: &'static str,
}

pub fn mc_report(expansion: &EigenpairExpansion, mc: &McSummary, converged: bool) -> McReport {
    let (pce_mean, pce_std) = expansion.lambda_moments();
    McReport {
        eigen_index: mc.eigen_index,
        n_samples: mc.n_samples,
        seed: mc.seed,
        solve_converged: converged,
        pce_mean,
        pce_std,
        mc_mean: mc.mean,
        mc_std: mc.std,
        mc_stderr: mc.stderr,
        z_mean: if mc.stderr > 0.0 { (mc.mean - pce_mean) / mc.stderr } else { 0.0 },
        std_rel_dev: if mc.std > 0.0 { (pce_std - mc.std).abs() / mc.std } else { pce_std },
        tracking: EIGEN_TRACKING,
    }
}

pub fn cmd_validate_mc(cfg: &RunConfig, dir: &Path) -> Result<McReport> {
    let problem = cfg.build()?;
    let sol = solve_problem(cfg, &problem)?;
    let mc = mc_eigen_sample(&problem.family, cfg.newton.eigen_index, cfg.mc_samples, cfg.newton.seed)?;
    let report = mc_report(&sol.expansion, &mc, sol.converged());
    let mut out = OutputWriter::new(dir, &cfg.hash())?;
    out.csv("mc_samples.csv", &[format!("seed={}", mc.seed), EIGEN_TRACKING.to_string()], |w| {
        writeln!(w, "sample,lambda")?;
        for (i, s) in mc.samples.iter().enumerate() {
            writeln!(w, "{i},{s:.17e}")?;
        }
        Ok(())
    })?;
    write_histogram(&mut out, "mc_histogram.csv", &mc.histogram)?;
    out.json("validate_mc.json", &report)?;
    Ok(report)
}

fn write_histogram(out: &mut OutputWriter, name: &str, h: &crate::oracle::Histogram) -> Result<()> {
    out.csv(name, &[], |w| {
        writeln!(w, "left,right,count,density")?;
        for i in 0..h.counts.len() {
            writeln!(w, "{:.17e},{:.17e},{},{:.17e}", h.edges[i], h.edges[i + 1], h.counts[i], h.density[i])?;
        }
        Ok(())
    })
}

pub fn cmd_pdf(cfg: &RunConfig, dir: &Path) -> Result<(PdfData, bool)> {
    let problem = cfg.build()?;
    let sol = solve_problem(cfg, &problem)?;
    let pdf = pdf_from_expansion(
        &sol.expansion.lambda,
        &problem.tensors.basis,
        cfg.pdf_samples,
        cfg.pdf_bins,
        cfg.newton.seed,
    )?;
    let mut out = OutputWriter::new(dir, &cfg.hash())?;
    out.csv("pdf_density.csv", &[format!("gaussian kernel, bandwidth={:.17e}", pdf.bandwidth)], |w| {
        writeln!(w, "x,density")?;
        for (x, d) in pdf.grid.iter().zip(&pdf.density) {
            writeln!(w, "{x:.17e},{d:.17e}")?;
        }
        Ok(())
    })?;
    write_histogram(&mut out, "pdf_histogram.csv", &pdf.histogram)?;
    out.json(
        "pdf.json",
        &json!({
            "solve_converged": sol.converged(),
            "n_samples": pdf.n_samples,
            "mean": pdf.mean,
            "std": pdf.std,
            "bandwidth": pdf.bandwidth,
            "point_mass": pdf.point_mass,
            "density_integral": pdf.integral(),
            "seed": cfg.newton.seed,
        }),
    )?;
    Ok((pdf, sol.converged()))
}

/// Dump `A_k` and `G_k` in MatrixMarket format.
pub fn cmd_assemble(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let problem = cfg.build()?;
    let hash = cfg.hash();
    let mut out = OutputWriter::new(dir, &hash)?;
    let mut files = Vec::new();
    let mut dump = |name: String, mat: &nalgebra_sparse::CsrMatrix<f64>| -> Result<()> {
        let path = dir.join(&name);
        let mut w = BufWriter::new(File::create(&path)?);
        write_matrix_market(&mut w, mat, &format!("config_hash={hash}\n{name}"))?;
        w.flush()?;
        files.push(path);
        Ok(())
    };
    for (k, a) in problem.family.a.iter().enumerate() {
        dump(format!("A_{k}.mtx"), a)?;
    }
    for (k, g) in problem.tensors.g.iter().enumerate() {
        dump(format!("G_{k}.mtx"), g)?;
    }
    out.json(
        "assemble.json",
        &json!({
            "n_x": problem.family.n(),
            "n_xi": problem.tensors.n_modes(),
            "kle_eigenvalues": problem.family.kle_eigenvalues,
            "sigma_a": problem.family.sigma_a,
            "basis_ordering": problem.tensors.basis.ordering_label(),
            "h_nnz": problem.tensors.h_nnz(),
        }),
    )?;
    files.extend(out.files().iter().cloned());
    Ok(files)
}
