use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stoch_eig::config::RunConfig;
use stoch_eig::io;
use stoch_eig::Error;

/// Stochastic Galerkin eigenpairs by low-rank inexact Newton.
#[derive(Parser)]
#[command(name = "stoch-eig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run INBM and write coefficients, factors, trace and metrics.
    Solve(Common),
    /// Compare low-rank INBM with dense Newton (small problems only).
    OracleCompare(Common),
    /// Compare chaos mean and std of the eigenvalue with Monte Carlo.
    ValidateMc(Common),
    /// Sample the eigenvalue expansion and write density data.
    Pdf(Common),
    /// Dump the assembled matrices in MatrixMarket format.
    Assemble(Common),
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn load(c: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.newton.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

fn status(converged: bool) -> u8 {
    if converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn run(cmd: Command) -> Result<u8, Error> {
    let common = match &cmd {
        Command::DefaultConfig => {
            println!("{}", RunConfig::default().to_json());
            return Ok(0);
        }
        Command::Solve(c)
        | Command::OracleCompare(c)
        | Command::ValidateMc(c)
        | Command::Pdf(c)
        | Command::Assemble(c) => c,
    };
    let (cfg, dir) = load(common)?;
    match cmd {
        Command::Solve(_) => {
            let (sol, files) = io::cmd_solve(&cfg, &dir)?;
            let s = &sol.summary;
            println!(
                "converged={} INS={} BINS={:.2} inner={} R={} |F|={:.3e} t={:.2}s mem_lr={:.1}kB mem_dense={:.1}kB",
                s.converged,
                s.ins,
                s.mean_bins,
                s.total_inner_iterations,
                s.rank,
                s.final_norm_f,
                s.wall_seconds,
                s.mem_lr_kb,
                s.mem_dense_kb
            );
            println!("lambda_0={:.10}", sol.expansion.lambda[0]);
            if let Some(r) = &sol.trace.stop_reason {
                eprintln!("stopped: {r}");
            }
            eprintln!("wrote {} files to {}", files.len(), dir.display());
            Ok(status(sol.converged()))
        }
        Command::OracleCompare(_) => {
            let r = io::cmd_oracle_compare(&cfg, &dir)?;
            println!(
                "lowrank_converged={} dense_converged={} lambda_rel={:.3e} phi_rel={:.3e}",
                r.lowrank_converged, r.dense_converged, r.deviation.lambda_rel, r.deviation.phi_rel
            );
            Ok(status(r.converged()))
        }
        Command::ValidateMc(_) => {
            let r = io::cmd_validate_mc(&cfg, &dir)?;
            println!(
                "pce_mean={:.10} mc_mean={:.10} z={:.2} pce_std={:.4e} mc_std={:.4e} std_rel={:.3}",
                r.pce_mean, r.mc_mean, r.z_mean, r.pce_std, r.mc_std, r.std_rel_dev
            );
            Ok(status(r.solve_converged))
        }
        Command::Pdf(_) => {
            let (pdf, converged) = io::cmd_pdf(&cfg, &dir)?;
            println!(
                "mean={:.10} std={:.4e} points={} integral={:.6}",
                pdf.mean,
                pdf.std,
                pdf.grid.len(),
                pdf.integral()
            );
            Ok(status(converged))
        }
        Command::Assemble(_) => {
            let files = io::cmd_assemble(&cfg, &dir)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
            Ok(0)
        }
        Command::DefaultConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
