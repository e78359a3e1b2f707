//! Factored residual, Jacobian and preconditioner against the dense Kronecker
//! forms and finite differences.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_eig::config::{Problem, RunConfig};
use stoch_eig::fem::{Mesh, StochasticMatrixFamily};
use stoch_eig::lowrank::{BlockVec, LowRankFactor};
use stoch_eig::operator::{GalerkinOperator, MeanPreconditioner};
use stoch_eig::oracle::{stack, DenseGalerkinSystem};
use stoch_eig::pce::GalerkinTensors;
use stoch_eig::Error;

fn problem(n_elem: usize, m: usize, r: usize, sigma: f64) -> Problem {
    RunConfig { n_elem, m, r, sigma_a: sigma, ..Default::default() }.build().unwrap()
}

fn rand_factor(rng: &mut ChaCha8Rng, nx: usize, nxi: usize, rank: usize) -> LowRankFactor {
    LowRankFactor {
        u: DMatrix::from_fn(nx, rank, |_, _| rng.random_range(-1.0..1.0)),
        v: DMatrix::from_fn(nxi, rank, |_, _| rng.random_range(-1.0..1.0)),
    }
}

fn rand_block(rng: &mut ChaCha8Rng, nx: usize, nxi: usize, rank: usize) -> BlockVec {
    BlockVec {
        y: rand_factor(rng, nx, nxi, rank),
        z: DVector::from_fn(nxi, |_, _| rng.random_range(-1.0..1.0)),
    }
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Problem sizes with N_x <= 25 and N_xi <= 15.
const SIZES: [(usize, usize, usize); 4] = [(5, 2, 3), (6, 3, 2), (6, 4, 2), (5, 1, 4)];

#[test]
fn jacobian_matches_dense_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for &(n_elem, m, r) in &SIZES {
        for &sigma in &[0.01, 0.1, 0.3] {
            let p = problem(n_elem, m, r, sigma);
            let sys = DenseGalerkinSystem::new(&p.family, &p.tensors).unwrap();
            let (nx, nxi) = (p.family.n(), p.tensors.n_modes());
            assert!(nx <= 25 && nxi <= 15);
            for _ in 0..10 {
                let rank = rng.random_range(1..=4);
                let y = rand_factor(&mut rng, nx, nxi, rank);
                let theta = DVector::from_fn(nxi, |_, _| rng.random_range(-1.0..1.0));
                let op = GalerkinOperator::new(&p.family, &p.tensors, y.clone(), theta.clone(), 1e-14).unwrap();
                let x = stack(&y.to_dense(), &theta);
                let j = sys.j(&x);
                assert_eq!(j.nrows(), (nx + 1) * nxi);
                let srank = rng.random_range(1..=3);
                let s = rand_block(&mut rng, nx, nxi, srank);
                let lr = op.jacobian_apply_raw(&s).unwrap().to_dense();
                worst = worst.max(rel(&lr, &(&j * s.to_dense())));
                let f = op.residual_raw().to_dense();
                worst = worst.max(rel(&f, &sys.f(&x)));
                cases += 1;
            }
        }
    }
    assert!(cases >= 100);
    assert!(worst <= 1e-10, "worst relative deviation {worst:e}");
}

#[test]
fn jacobian_matches_finite_differences_with_unit_slope() {
    let p = problem(5, 2, 3, 0.1);
    let (nx, nxi) = (p.family.n(), p.tensors.n_modes());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let x = rand_block(&mut rng, nx, nxi, 2);
        let s = rand_block(&mut rng, nx, nxi, 2);
        let op = GalerkinOperator::new(&p.family, &p.tensors, x.y.clone(), x.z.clone(), 1e-14).unwrap();
        let f0 = op.residual_raw().to_dense();
        let js = op.jacobian_apply_raw(&s).unwrap().to_dense();
        let hs = [1e-3, 1e-4, 1e-5, 1e-6];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let xp = x.axpy(h, &s).unwrap();
                let oph = GalerkinOperator::new(&p.family, &p.tensors, xp.y, xp.z, 1e-14).unwrap();
                ((oph.residual_raw().to_dense() - &f0) / h - &js).norm()
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log10();
            assert!((slope - 1.0).abs() < 0.1, "slope {slope} from {errs:?}");
        }
    }
}

#[test]
fn dense_jacobian_columns_match_finite_differences() {
    let p = problem(5, 1, 2, 0.2);
    let sys = DenseGalerkinSystem::new(&p.family, &p.tensors).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DVector::from_fn(sys.dim(), |_, _| rng.random_range(-1.0..1.0));
    let j = sys.j(&x);
    let h = 1e-6;
    let f0 = sys.f(&x);
    for c in (0..sys.dim()).step_by(3) {
        let mut xp = x.clone();
        xp[c] += h;
        let fd = (sys.f(&xp) - &f0) / h;
        assert!((fd - j.column(c)).norm() <= 1e-4 * (1.0 + j.column(c).norm()));
    }
}

#[test]
fn jacobian_is_linear() {
    let p = problem(6, 3, 2, 0.1);
    let (nx, nxi) = (p.family.n(), p.tensors.n_modes());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_block(&mut rng, nx, nxi, 3);
    let op = GalerkinOperator::new(&p.family, &p.tensors, x.y, x.z, 1e-14).unwrap();
    let s1 = rand_block(&mut rng, nx, nxi, 2);
    let s2 = rand_block(&mut rng, nx, nxi, 1);
    let (a, b) = (0.7, -2.3);
    let combined = s1.scale(a).axpy(b, &s2).unwrap();
    let lhs = op.jacobian_apply_raw(&combined).unwrap().to_dense();
    let rhs = op.jacobian_apply_raw(&s1).unwrap().to_dense() * a + op.jacobian_apply_raw(&s2).unwrap().to_dense() * b;
    assert!(rel(&lhs, &rhs) <= 1e-10);
}

fn deterministic_state(p: &Problem, index: usize) -> (LowRankFactor, DVector<f64>) {
    let (vals, vecs) = p.family.mean_eigen();
    let nxi = p.tensors.n_modes();
    let mut v = DMatrix::zeros(nxi, 1);
    v[(0, 0)] = 1.0;
    let u = DMatrix::from_column_slice(p.family.n(), 1, vecs.column(index).as_slice());
    let mut theta = DVector::zeros(nxi);
    theta[0] = vals[index];
    (LowRankFactor { u, v }, theta)
}

#[test]
fn deterministic_embedding_has_zero_residual() {
    let p = problem(6, 2, 3, 0.0);
    assert!(p.family.a.iter().skip(1).all(|a| a.triplet_iter().all(|(_, _, v)| *v == 0.0)));
    let (y, theta) = deterministic_state(&p, 0);
    let op = GalerkinOperator::new(&p.family, &p.tensors, y.clone(), theta.clone(), 1e-14).unwrap();
    let r0 = op.residual_raw();
    assert!(r0.norm() <= 1e-10, "{:e} {:e} {:e}", r0.y.norm(), r0.z.norm(), (DMatrix::from(&p.family.a[0]) * y.to_dense() - y.to_dense() * theta[0]).norm());

    // doubling v doubles block 1 and moves d_0 from 0 to 3
    let op2 = GalerkinOperator::new(&p.family, &p.tensors, y.scale(2.0), theta, 1e-14).unwrap();
    let f2 = op2.residual_raw();
    assert!((f2.z[0] - 3.0).abs() <= 1e-12);
    assert!(f2.y.norm() <= 1e-10);
    assert!(f2.z.iter().skip(1).all(|d| d.abs() <= 1e-12));
}

#[test]
fn preconditioner_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &(n_elem, m, r) in &SIZES {
        let p = problem(n_elem, m, r, 0.1);
        let sys = DenseGalerkinSystem::new(&p.family, &p.tensors).unwrap();
        let (nx, nxi) = (p.family.n(), p.tensors.n_modes());
        let y = rand_factor(&mut rng, nx, nxi, 2);
        let mut theta = DVector::from_fn(nxi, |_, _| rng.random_range(-1.0..1.0));
        theta[0] = 2.5;
        let op = GalerkinOperator::new(&p.family, &p.tensors, y.clone(), theta.clone(), 1e-14).unwrap();
        let mean = MeanPreconditioner::new(&p.family.a[0]).unwrap();
        let pd = sys
            .mean_preconditioner(&DMatrix::from(&p.family.a[0]), &stack(&y.to_dense(), &theta))
            .unwrap();
        let w = rand_block(&mut rng, nx, nxi, 2);
        let lr = op.precond_apply(&mean, &w).unwrap().to_dense();
        let dense = pd.lu().solve(&w.to_dense()).unwrap();
        assert!(rel(&lr, &dense) <= 1e-10, "{}", rel(&lr, &dense));
    }
}

#[test]
fn preconditioner_is_linear() {
    let p = problem(5, 2, 3, 0.1);
    let (nx, nxi) = (p.family.n(), p.tensors.n_modes());
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (y, theta) = deterministic_state(&p, 0);
    let op = GalerkinOperator::new(&p.family, &p.tensors, y, theta, 1e-14).unwrap();
    let mean = MeanPreconditioner::new(&p.family.a[0]).unwrap();
    let w1 = rand_block(&mut rng, nx, nxi, 2);
    let w2 = rand_block(&mut rng, nx, nxi, 3);
    let lhs = op.precond_apply(&mean, &w1.scale(3.0).axpy(-0.5, &w2).unwrap()).unwrap().to_dense();
    let rhs = op.precond_apply(&mean, &w1).unwrap().to_dense() * 3.0 - op.precond_apply(&mean, &w2).unwrap().to_dense() * 0.5;
    assert!(rel(&lhs, &rhs) <= 1e-12);
}

#[test]
fn preconditioner_closed_form() {
    // A_0 = 2I, theta_0 = 0, v_0 = e_1: block 1 unchanged, block 2 halved
    let n = 4;
    let mut a0 = nalgebra_sparse::CooMatrix::new(n, n);
    for i in 0..n {
        a0.push(i, i, 2.0);
    }
    let family = StochasticMatrixFamily {
        a: vec![CsrMatrix::from(&a0), CsrMatrix::zeros(n, n)],
        sigma_a: 0.0,
        mesh: Mesh::new(3).unwrap(),
        kle_eigenvalues: vec![1.0],
    };
    let tensors = GalerkinTensors::for_degree(1, 2).unwrap();
    let nxi = tensors.n_modes();
    let mut u = DMatrix::zeros(n, 1);
    u[(0, 0)] = 1.0;
    let mut v = DMatrix::zeros(nxi, 1);
    v[(0, 0)] = 1.0;
    let op = GalerkinOperator::new(&family, &tensors, LowRankFactor { u, v }, DVector::zeros(nxi), 1e-14).unwrap();
    let mean = MeanPreconditioner::new(&family.a[0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w = rand_block(&mut rng, n, nxi, 2);
    let out = op.precond_apply(&mean, &w).unwrap();
    assert!((out.y.to_dense() - w.y.to_dense()).norm() <= 1e-14);
    assert!((out.z - &w.z * 0.5).norm() <= 1e-14);
}

#[test]
fn preconditioner_guards() {
    let p = problem(5, 1, 2, 0.1);
    let nxi = p.tensors.n_modes();
    let mean = MeanPreconditioner::new(&p.family.a[0]).unwrap();
    let (y, mut theta) = deterministic_state(&p, 0);
    theta[0] = 1.0;
    let op = GalerkinOperator::new(&p.family, &p.tensors, y, theta.clone(), 1e-14).unwrap();
    assert!(matches!(op.preconditioner(&mean), Err(Error::SingularPreconditioner(_))));
    theta[0] = 0.5;
    let zero = LowRankFactor::zeros(p.family.n(), nxi);
    let op = GalerkinOperator::new(&p.family, &p.tensors, zero, theta, 1e-14).unwrap();
    assert!(matches!(op.preconditioner(&mean), Err(Error::SchurDegenerate(_))));
}

#[test]
fn shape_mismatch_is_rejected() {
    let p = problem(5, 1, 2, 0.1);
    let nxi = p.tensors.n_modes();
    let bad = LowRankFactor::zeros(p.family.n() + 1, nxi);
    assert!(GalerkinOperator::new(&p.family, &p.tensors, bad, DVector::zeros(nxi), 1e-14).is_err());
}

#[test]
fn dense_guard() {
    let p = problem(8, 6, 4, 0.01);
    assert!(matches!(
        DenseGalerkinSystem::new(&p.family, &p.tensors),
        Err(Error::SizeGuard { .. })
    ));
}
