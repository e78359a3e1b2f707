//! INBM runs on small problems against dense Newton and the deterministic
//! eigensolver.

use nalgebra::DMatrix;
use stoch_eig::config::RunConfig;
use stoch_eig::io::{deviation, oracle_compare, solve_problem};
use stoch_eig::newton::{initial_guess, ForcingStrategy, InitialGuessMode};

fn small(sigma: f64, index: usize) -> RunConfig {
    let mut cfg = RunConfig { n_elem: 6, m: 2, r: 3, sigma_a: sigma, ..Default::default() };
    cfg.newton.eigen_index = index;
    cfg
}

#[test]
fn zero_variance_reproduces_deterministic_eigenpairs() {
    for index in [1, 2, 4] {
        let cfg = RunConfig { sigma_a: 0.0, ..small(0.0, index) };
        let p = cfg.build().unwrap();
        let sol = solve_problem(&cfg, &p).unwrap();
        assert!(sol.converged());
        assert!(sol.trace.ins() <= 2);
        let (vals, vecs) = p.family.mean_eigen();
        let lam = &sol.expansion.lambda;
        assert!((lam[0] - vals[index - 1]).abs() <= 1e-8);
        assert!(lam.iter().skip(1).all(|l| l.abs() <= 1e-8));
        let phi = sol.expansion.phi_dense();
        let col0 = phi.column(0);
        let v = vecs.column(index - 1);
        let sign = col0.dot(&v).signum();
        assert!((col0 * sign - v).norm() <= 1e-8);
        assert!(phi.columns(1, phi.ncols() - 1).norm() <= 1e-8);
    }
}

#[test]
fn agrees_with_dense_newton_for_every_forcing_strategy() {
    for strategy in [ForcingStrategy::Ds, ForcingStrategy::Const, ForcingStrategy::EwA, ForcingStrategy::EwB] {
        for sigma in [0.01, 0.1] {
            let mut cfg = small(sigma, 1);
            cfg.newton.forcing.strategy = strategy;
            let p = cfg.build().unwrap();
            let rep = oracle_compare(&cfg, &p).unwrap();
            assert!(rep.converged(), "{strategy:?} sigma={sigma}: {rep:?}");
            assert!(rep.deviation.lambda_rel <= 1e-6, "{strategy:?}: {:?}", rep.deviation);
            assert!(rep.deviation.phi_rel <= 1e-5, "{strategy:?}: {:?}", rep.deviation);
        }
    }
}

#[test]
fn traces_satisfy_globalization_invariants() {
    for index in [1, 4] {
        for strategy in [ForcingStrategy::Ds, ForcingStrategy::EwA, ForcingStrategy::EwB] {
            let mut cfg = small(0.1, index);
            cfg.newton.forcing.strategy = strategy;
            let p = cfg.build().unwrap();
            let sol = solve_problem(&cfg, &p).unwrap();
            assert!(sol.converged(), "index {index} {strategy:?}: {:?}", sol.trace.stop_reason);
            assert!(sol.trace.acceptability_violations(&cfg.newton.backtrack).is_empty());
            assert!(sol.trace.normalization_defect <= 10.0 * sol.trace.tolerance);
            assert!(sol.trace.final_norm_f <= sol.trace.tolerance);
            for s in &sol.trace.steps {
                assert!(s.eta >= cfg.newton.forcing.eta_min && s.eta <= cfg.newton.forcing.eta_max);
                assert!(s.backtracks <= cfg.newton.backtrack.max_backtracks);
            }
        }
    }
}

#[test]
fn converges_to_the_eigenvalue_nearest_the_seed() {
    for index in [1, 4] {
        let cfg = small(0.01, index);
        let p = cfg.build().unwrap();
        let sol = solve_problem(&cfg, &p).unwrap();
        assert!(sol.converged());
        let (vals, _) = p.family.mean_eigen();
        let l0 = sol.expansion.lambda[0];
        let nearest = (0..vals.len())
            .min_by(|&a, &b| (vals[a] - l0).abs().total_cmp(&(vals[b] - l0).abs()))
            .unwrap();
        assert_eq!(nearest, index - 1);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = small(0.1, 1);
    let p = cfg.build().unwrap();
    let a = solve_problem(&cfg, &p).unwrap();
    let b = solve_problem(&cfg, &p).unwrap();
    assert_eq!(a.expansion.lambda, b.expansion.lambda);
    assert_eq!(a.trace.residual_norms(), b.trace.residual_norms());

    let mut rcfg = cfg.clone();
    rcfg.newton.init = InitialGuessMode::Random;
    rcfg.newton.seed = 17;
    let (y1, t1) = initial_guess(&rcfg.newton, &p.family, p.tensors.n_modes()).unwrap();
    let (y2, t2) = initial_guess(&rcfg.newton, &p.family, p.tensors.n_modes()).unwrap();
    assert_eq!(y1.to_dense(), y2.to_dense());
    assert_eq!(t1, t2);
    rcfg.newton.seed = 18;
    let (y3, _) = initial_guess(&rcfg.newton, &p.family, p.tensors.n_modes()).unwrap();
    assert_ne!(y1.to_dense(), y3.to_dense());
}

#[test]
fn lambda_is_invariant_under_sign_flip_of_the_seed() {
    let cfg = small(0.1, 1);
    let p = cfg.build().unwrap();
    let (y, theta) = initial_guess(&cfg.newton, &p.family, p.tensors.n_modes()).unwrap();
    let (e1, _) = stoch_eig::newton::inbm_solve_from(&p.family, &p.tensors, &cfg.newton, y.clone(), theta.clone()).unwrap();
    let (e2, _) = stoch_eig::newton::inbm_solve_from(&p.family, &p.tensors, &cfg.newton, y.scale(-1.0), theta).unwrap();
    let d = deviation(&e1.lambda, &e1.phi_dense(), &e2.lambda, &e2.phi_dense());
    assert!(d.lambda_rel <= 1e-9, "{d:?}");
    assert!(d.phi_rel <= 1e-6, "{d:?}");
    assert!(e1.phi_dense().dot(&e2.phi_dense()) < 0.0);
}

#[test]
fn dense_newton_has_quadratic_tail() {
    let cfg = small(0.1, 1);
    let p = cfg.build().unwrap();
    let rep = oracle_compare(&cfg, &p).unwrap();
    let h = &rep.dense_residual_history;
    assert!(rep.dense_converged);
    // log-residual roughly doubles in magnitude once in the asymptotic regime
    let tail: Vec<f64> = h.iter().rev().take(3).rev().map(|x| x.log10()).collect();
    assert!(tail.len() == 3 && tail[2] < tail[1] && tail[1] < tail[0]);
    assert!(tail[1] <= 1.5 * tail[0], "{h:?}");
}

#[test]
fn expansion_round_trips_factors() {
    let cfg = small(0.1, 1);
    let p = cfg.build().unwrap();
    let sol = solve_problem(&cfg, &p).unwrap();
    let e = &sol.expansion;
    let f = e.factor();
    assert_eq!(f.rank(), e.rank());
    let dense: DMatrix<f64> = f.to_dense();
    assert_eq!(dense.shape(), (p.family.n(), p.tensors.n_modes()));
    let (mean, std) = e.lambda_moments();
    assert_eq!(mean, e.lambda[0]);
    assert!(std > 0.0);
}
