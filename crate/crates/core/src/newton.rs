//! Globalized inexact Newton iteration for the coupled eigenpair system.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::StochasticMatrixFamily;
use crate::krylov::{bicgstab, KrylovConfig, KrylovReport};
use crate::lowrank::{BlockVec, LowRankFactor};
use crate::operator::{EigenpairExpansion, GalerkinOperator, MeanPreconditioner};
use crate::pce::GalerkinTensors;

pub const GOLDEN: f64 = 1.618_033_988_749_895;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingStrategy {
    /// `min(1 / (k + 2), ||F_k||)`.
    Ds,
    /// A fixed value, `1e-4` by default.
    Const,
    /// `| ||F_k|| - ||F_{k-1} + J_{k-1} s_{k-1}|| | / ||F_{k-1}||`.
    EwA,
    /// `tau (||F_k|| / ||F_{k-1}||)^omega`.
    EwB,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcingParams {
    pub strategy: ForcingStrategy,
    pub tau: f64,
    pub omega: f64,
    pub eta0: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub constant: f64,
}

impl Default for ForcingParams {
    fn default() -> Self {
        ForcingParams {
            strategy: ForcingStrategy::EwB,
            tau: 0.9,
            omega: GOLDEN,
            eta0: 0.9,
            eta_min: 0.1,
            eta_max: 0.9,
            constant: 1e-4,
        }
    }
}

impl ForcingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eta_min && self.eta_min <= self.eta_max && self.eta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= eta_min <= eta_max < 1, got [{}, {}]",
                self.eta_min, self.eta_max
            )));
        }
        if !(0.0..1.0).contains(&self.tau) || !(1.0..=2.0).contains(&self.omega) {
            return Err(Error::Config(format!(
                "need tau in [0, 1) and omega in [1, 2], got {} and {}",
                self.tau, self.omega
            )));
        }
        if !(0.0..1.0).contains(&self.eta0) || !(self.constant > 0.0 && self.constant < 1.0) {
            return Err(Error::Config("eta0 and the constant forcing term must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn clamp(&self, eta: f64) -> f64 {
        eta.clamp(self.eta_min, self.eta_max)
    }
}

/// Norms entering the forcing term of step `k`.
#[derive(Clone, Copy, Debug)]
pub struct ForcingInput {
    pub k: usize,
    pub norm_f: f64,
    pub norm_f_prev: f64,
    /// Final forcing term of the previous step, after backtracking.
    pub eta_prev: f64,
    /// `||F_{k-1} + J_{k-1} s_{k-1}||` for the accepted step.
    pub linear_model: f64,
}

pub fn forcing_next(p: &ForcingParams, x: ForcingInput) -> f64 {
    let eta = match p.strategy {
        ForcingStrategy::Ds => (1.0 / (x.k as f64 + 2.0)).min(x.norm_f),
        ForcingStrategy::Const => p.constant,
        ForcingStrategy::EwA if x.k == 0 => p.eta0,
        ForcingStrategy::EwA => {
            let zeta = (x.norm_f - x.linear_model).abs() / x.norm_f_prev;
            let guard = x.eta_prev.powf(GOLDEN);
            if guard > 0.1 {
                zeta.max(guard)
            } else {
                zeta
            }
        }
        ForcingStrategy::EwB if x.k == 0 => p.eta0,
        ForcingStrategy::EwB => {
            let zeta = p.tau * (x.norm_f / x.norm_f_prev).powf(p.omega);
            let guard = p.tau * x.eta_prev.powf(p.omega);
            if guard > 0.1 {
                zeta.max(guard)
            } else {
                zeta
            }
        }
    };
    p.clamp(if eta.is_finite() { eta } else { p.eta_max })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktrackConfig {
    pub t: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub max_backtracks: usize,
}

impl Default for BacktrackConfig {
    fn default() -> Self {
        BacktrackConfig {
            t: 1e-4,
            theta_min: 0.1,
            theta_max: 0.5,
            max_backtracks: 20,
        }
    }
}

impl BacktrackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::Config(format!("backtracking t must lie in (0, 1), got {}", self.t)));
        }
        if !(0.0 < self.theta_min && self.theta_min < self.theta_max && self.theta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < theta_min < theta_max < 1, got {} and {}",
                self.theta_min, self.theta_max
            )));
        }
        Ok(())
    }

    /// `1 - t (1 - eta)`.
    pub fn acceptance_factor(&self, eta: f64) -> f64 {
        1.0 - self.t * (1.0 - eta)
    }

    /// Step fraction minimizing the quadratic through `g(0)`, `g'(0)` and
    /// `g(1)`, clamped to `[theta_min, theta_max]`.
    pub fn reduction(&self, g0: f64, gp0: f64, g1: f64) -> f64 {
        let curv = g1 - g0 - gp0;
        let th = if curv > 0.0 { -gp0 / (2.0 * curv) } else { self.theta_max };
        if th.is_finite() {
            th.clamp(self.theta_min, self.theta_max)
        } else {
            self.theta_max
        }
    }
}

/// Outcome of a backtracking search.
#[derive(Clone, Debug)]
pub struct Backtracked<S> {
    pub state: S,
    pub norm_f: f64,
    /// Accepted fraction of the original step.
    pub fraction: f64,
    pub eta: f64,
    pub count: usize,
}

/// Shorten the step until `||F(x + s)|| <= [1 - t (1 - eta)] ||F(x)||`.
///
/// `trial(fraction)` returns the trial state and its residual norm;
/// `gp0` is the directional derivative of `||F||^2` along the full step.
pub fn backtrack<S>(
    norm_f: f64,
    gp0: f64,
    eta: f64,
    cfg: &BacktrackConfig,
    mut trial: impl FnMut(f64) -> Result<(S, f64)>,
) -> Result<Backtracked<S>> {
    let mut fraction = 1.0;
    let mut eta = eta;
    let mut last = f64::NAN;
    for count in 0..=cfg.max_backtracks {
        let (state, norm_trial) = trial(fraction)?;
        last = norm_trial;
        if norm_trial <= cfg.acceptance_factor(eta) * norm_f {
            return Ok(Backtracked { state, norm_f: norm_trial, fraction, eta, count });
        }
        let th = cfg.reduction(norm_f * norm_f, fraction * gp0, norm_trial * norm_trial);
        fraction *= th;
        eta = 1.0 - th * (1.0 - eta);
    }
    Err(Error::BacktrackFailure {
        backtracks: cfg.max_backtracks,
        norm_f,
        trial_norm: last,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuessMode {
    /// Eigenpair `eigen_index` of `A_0` in chaos mode 0.
    Deterministic,
    /// Uniform entries on `[-1, 1]`, normalized, with a Rayleigh-quotient `theta_0`.
    Random,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    pub backtrack: BacktrackConfig,
    pub forcing: ForcingParams,
    pub krylov: KrylovConfig,
    pub seed: u64,
    pub init: InitialGuessMode,
    /// 1-based index of the eigenpair of `A_0` used to seed the iteration.
    pub eigen_index: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            abs_tol: 1e-8,
            rel_tol: 1e-10,
            max_steps: 100,
            backtrack: BacktrackConfig::default(),
            forcing: ForcingParams::default(),
            krylov: KrylovConfig::default(),
            seed: 0,
            init: InitialGuessMode::Deterministic,
            eigen_index: 2,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol >= 0.0) {
            return Err(Error::Config("outer tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.eigen_index == 0 {
            return Err(Error::Config("eigen_index is 1-based".into()));
        }
        self.backtrack.validate()?;
        self.forcing.validate()?;
        self.krylov.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub norm_f: f64,
    /// Forcing term chosen before the inner solve.
    pub eta: f64,
    /// Forcing term after backtracking updates.
    pub eta_final: f64,
    pub inner_iterations: usize,
    pub inner_relres: f64,
    pub inner_converged: bool,
    pub backtracks: usize,
    pub step_fraction: f64,
    pub step_norm: f64,
    pub norm_f_next: f64,
    pub rank: usize,
    pub peak_inner_rank: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub initial_norm_f: f64,
    pub tolerance: f64,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    pub final_norm_f: f64,
    pub normalization_defect: f64,
    /// Last iterate, kept when the iteration stops without converging.
    pub last_iterate: Option<EigenpairExpansion>,
    /// Why the iteration stopped early, if it did.
    pub stop_reason: Option<String>,
}

impl NewtonTrace {
    pub fn ins(&self) -> usize {
        self.steps.len()
    }

    pub fn total_backtracks(&self) -> usize {
        self.steps.iter().map(|s| s.backtracks).sum()
    }

    /// Backtracks per accepted step.
    pub fn mean_bins(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_backtracks() as f64 / self.ins() as f64
        }
    }

    /// Backtracks per residual evaluation (accepted or rejected trial).
    pub fn bins_per_trial(&self) -> f64 {
        let trials = self.ins() + self.total_backtracks();
        if trials == 0 {
            0.0
        } else {
            self.total_backtracks() as f64 / trials as f64
        }
    }

    pub fn total_inner(&self) -> usize {
        self.steps.iter().map(|s| s.inner_iterations).sum()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.wall_seconds).sum()
    }

    /// Residual norms `||F_0||, ||F_1||, ...`.
    pub fn residual_norms(&self) -> Vec<f64> {
        let mut out = vec![self.initial_norm_f];
        out.extend(self.steps.iter().map(|s| s.norm_f_next));
        out
    }

    /// Steps violating the sufficient-decrease condition.
    pub fn acceptability_violations(&self, cfg: &BacktrackConfig) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.norm_f_next > cfg.acceptance_factor(s.eta_final) * s.norm_f)
            .map(|s| s.step)
            .collect()
    }

    /// Steps whose inner solve stopped above its forcing term.
    pub fn inner_tolerance_violations(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.inner_relres > s.eta)
            .map(|s| s.step)
            .collect()
    }

    /// CSV without wall times, so reruns produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: &str) -> Result<()> {
        for line in header_comment.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(
            out,
            "step,norm_f,eta,eta_final,inner_iterations,inner_relres,backtracks,step_fraction,step_norm,norm_f_next,rank,peak_inner_rank"
        )?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{},{:.17e},{},{:.17e},{:.17e},{:.17e},{},{}",
                s.step,
                s.norm_f,
                s.eta,
                s.eta_final,
                s.inner_iterations,
                s.inner_relres,
                s.backtracks,
                s.step_fraction,
                s.step_norm,
                s.norm_f_next,
                s.rank,
                s.peak_inner_rank
            )?;
        }
        Ok(())
    }
}

/// Table-style summary of one solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub converged: bool,
    pub ins: usize,
    pub mean_bins: f64,
    pub bins_per_trial: f64,
    pub total_inner_iterations: usize,
    pub wall_seconds: f64,
    pub rank: usize,
    pub n_x: usize,
    pub n_xi: usize,
    /// `8 R (N_x + N_xi) / 1024`.
    pub mem_lr_kb: f64,
    /// `8 N_x N_xi / 1024`.
    pub mem_dense_kb: f64,
    pub final_norm_f: f64,
    pub normalization_defect: f64,
}

pub fn memory_kb(rank: usize, nx: usize, nxi: usize) -> (f64, f64) {
    (
        8.0 * rank as f64 * (nx + nxi) as f64 / 1024.0,
        8.0 * nx as f64 * nxi as f64 / 1024.0,
    )
}

impl RunSummary {
    pub fn new(trace: &NewtonTrace, rank: usize, nx: usize, nxi: usize) -> Self {
        let (mem_lr_kb, mem_dense_kb) = memory_kb(rank, nx, nxi);
        RunSummary {
            converged: trace.converged,
            ins: trace.ins(),
            mean_bins: trace.mean_bins(),
            bins_per_trial: trace.bins_per_trial(),
            total_inner_iterations: trace.total_inner(),
            wall_seconds: trace.wall_seconds(),
            rank,
            n_x: nx,
            n_xi: nxi,
            mem_lr_kb,
            mem_dense_kb,
            final_norm_f: trace.final_norm_f,
            normalization_defect: trace.normalization_defect,
        }
    }
}

/// Starting state `(Y, theta)`.
pub fn initial_guess(
    cfg: &NewtonConfig,
    family: &StochasticMatrixFamily,
    nxi: usize,
) -> Result<(LowRankFactor, DVector<f64>)> {
    let nx = family.n();
    let mut theta = DVector::zeros(nxi);
    match cfg.init {
        InitialGuessMode::Deterministic => {
            if cfg.eigen_index == 0 || cfg.eigen_index > nx {
                return Err(Error::Config(format!("eigen_index {} outside 1..={nx}", cfg.eigen_index)));
            }
            let (vals, vecs) = family.mean_eigen();
            let l = cfg.eigen_index - 1;
            let u = vecs.column(l).into_owned();
            let mut v = DMatrix::zeros(nxi, 1);
            v[(0, 0)] = 1.0;
            theta[0] = vals[l];
            Ok((LowRankFactor { u: DMatrix::from_column_slice(nx, 1, u.as_slice()), v }, theta))
        }
        InitialGuessMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut y = DMatrix::from_fn(nx, nxi, |_, _| rng.random_range(-1.0..=1.0));
            let n = y.norm();
            y /= n;
            let v0 = y.column(0).into_owned();
            let a0v0 = &family.a[0] * &DMatrix::from_column_slice(nx, 1, v0.as_slice());
            theta[0] = v0.dot(&a0v0.column(0)) / v0.norm_squared();
            Ok((LowRankFactor::from_dense(&y, cfg.krylov.trunc_tol), theta))
        }
    }
}

/// Solve from the configured initial guess.
pub fn inbm_solve(
    family: &StochasticMatrixFamily,
    tensors: &GalerkinTensors,
    cfg: &NewtonConfig,
) -> Result<(EigenpairExpansion, NewtonTrace)> {
    let (y, theta) = initial_guess(cfg, family, tensors.n_modes())?;
    inbm_solve_from(family, tensors, cfg, y, theta)
}

/// Solve from an explicit starting state.
pub fn inbm_solve_from(
    family: &StochasticMatrixFamily,
    tensors: &GalerkinTensors,
    cfg: &NewtonConfig,
    y0: LowRankFactor,
    theta0: DVector<f64>,
) -> Result<(EigenpairExpansion, NewtonTrace)> {
    cfg.validate()?;
    let eps = cfg.krylov.trunc_tol;
    let mean_pc = if cfg.krylov.use_preconditioner {
        Some(MeanPreconditioner::new(&family.a[0])?)
    } else {
        None
    };

    let mut op = GalerkinOperator::new(family, tensors, y0, theta0, eps)?;
    let mut f = op.residual();
    let mut norm_f = f.norm();
    if !norm_f.is_finite() {
        return Err(Error::NonFinite("initial residual"));
    }
    let mut trace = NewtonTrace {
        initial_norm_f: norm_f,
        tolerance: cfg.abs_tol.max(cfg.rel_tol * norm_f),
        ..Default::default()
    };

    let mut prev = (norm_f, cfg.forcing.eta0, 0.0);
    for k in 0..cfg.max_steps {
        if norm_f <= trace.tolerance {
            trace.converged = true;
            break;
        }
        let clock = Instant::now();
        let eta = if k == 0 && matches!(cfg.forcing.strategy, ForcingStrategy::EwA | ForcingStrategy::EwB) {
            cfg.forcing.clamp(cfg.forcing.eta0)
        } else {
            forcing_next(
                &cfg.forcing,
                ForcingInput {
                    k,
                    norm_f,
                    norm_f_prev: prev.0,
                    eta_prev: prev.1,
                    linear_model: prev.2,
                },
            )
        };

        let kcfg = KrylovConfig {
            rel_tol: eta.max(cfg.krylov.rel_tol),
            seed: cfg.krylov.seed.wrapping_add(k as u64),
            ..cfg.krylov.clone()
        };
        let rhs = f.scale(-1.0);
        let x0 = BlockVec::zeros(op.nx(), op.nxi());
        let (s, report): (BlockVec, KrylovReport) = match &mean_pc {
            Some(mean) => {
                let pc = op.preconditioner(mean)?;
                bicgstab(|x| op.jacobian_apply_raw(x), |x| Ok(pc.apply(x)), &rhs, &x0, &kcfg)?
            }
            None => bicgstab(|x| op.jacobian_apply_raw(x), |x| Ok(x.clone()), &rhs, &x0, &kcfg)?,
        };

        let js = op.jacobian_apply(&s)?;
        let gp0 = 2.0 * f.dot(&js)?;
        let step_norm_full = s.norm();
        let bt = match backtrack(norm_f, gp0, eta, &cfg.backtrack, |fraction| {
            let y = op
                .y
                .add_scaled(fraction, &s.y)
                .truncate_abs(eps * fraction * step_norm_full);
            let theta = &op.theta + &s.z * fraction;
            let trial = GalerkinOperator::new(family, tensors, y, theta, eps)?;
            let ft = trial.residual();
            let nt = ft.norm();
            if !nt.is_finite() {
                return Err(Error::NonFinite("trial residual"));
            }
            Ok(((trial, ft), nt))
        }) {
            Ok(bt) => bt,
            Err(e @ Error::BacktrackFailure { .. }) => {
                trace.stop_reason = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };

        let linear_model = f.axpy(bt.fraction, &js)?.norm();
        let (next_op, next_f) = bt.state;
        trace.steps.push(StepRecord {
            step: k,
            norm_f,
            eta,
            eta_final: bt.eta,
            inner_iterations: report.iterations,
            inner_relres: report.relres,
            inner_converged: report.converged,
            backtracks: bt.count,
            step_fraction: bt.fraction,
            step_norm: bt.fraction * step_norm_full,
            norm_f_next: bt.norm_f,
            rank: next_op.y.rank(),
            peak_inner_rank: report.peak_rank,
            wall_seconds: clock.elapsed().as_secs_f64(),
        });
        prev = (norm_f, bt.eta, linear_model);
        op = next_op;
        f = next_f;
        norm_f = bt.norm_f;
    }
    if norm_f <= trace.tolerance {
        trace.converged = true;
    } else if trace.stop_reason.is_none() {
        trace.stop_reason = Some(format!("step limit of {} reached", cfg.max_steps));
    }
    trace.final_norm_f = norm_f;
    trace.normalization_defect = op.normalization_defect();
    let expansion = EigenpairExpansion::new(&op.y, &op.theta, tensors);
    if !trace.converged {
        let steps = trace.ins();
        trace.last_iterate = Some(expansion);
        return Err(Error::NotConverged {
            steps,
            norm_f,
            trace: Box::new(trace),
        });
    }
    Ok((expansion, trace))
}
