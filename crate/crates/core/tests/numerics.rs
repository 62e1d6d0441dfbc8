mod common;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use spikelab_core::grad::{dense_hessian, HvpBackend, Objective};
use spikelab_core::objectives::{FnnTask, FnnTaskSpec};
use spikelab_core::optim::{accumulate, OptimizerConfig, OptimizerState};
use spikelab_core::spectral::{
    lambda_grad, lambda_max_preconditioned, precondition_hvp, PowerOptions, Preconditioner, Start,
};
use spikelab_core::theory::real_spectrum_check;

#[test]
fn gradient_matches_central_differences() {
    println!("{}", common::gradient_vs_fd().unwrap());
}

#[test]
fn hvp_is_linear() {
    println!("{}", common::hvp_linearity().unwrap());
}

#[test]
fn hvp_is_symmetric() {
    println!("{}", common::hvp_symmetry().unwrap());
}

#[test]
fn power_iteration_matches_dense_eigensolver() {
    println!("{}", common::power_vs_dense().unwrap());
}

#[test]
fn scaled_hessian_has_real_spectrum() {
    println!("{}", common::real_spectrum().unwrap());
}

#[test]
fn identity_hessian_spectrum_is_d() {
    let h: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let d = vec![0.5, 3.0, 1.0, 7.0];
    let rep = real_spectrum_check(&h, &d).unwrap();
    let mut want = d.clone();
    want.sort_by(f64::total_cmp);
    for (a, b) in rep.eigenvalues.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn fd_hvp_tracks_exact_on_small_net() {
    let net = FnnTask::new(FnnTaskSpec::sine(3, 20, 8)).unwrap();
    let mut r = common::rng(9);
    for _ in 0..5 {
        let th = common::gaussian(&mut r, net.dim());
        let v = common::gaussian(&mut r, net.dim());
        let a = spikelab_core::grad::hvp_raw(&net, &th, &v, HvpBackend::Exact).unwrap();
        let b = spikelab_core::grad::hvp_raw(&net, &th, &v, HvpBackend::CentralFd { fd_step: None }).unwrap();
        let err: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / scale <= 1e-4, "relative {}", err / scale);
    }
}

#[test]
fn preconditioned_lambda_max_matches_dense_similar_matrix() {
    let net = FnnTask::new(FnnTaskSpec::sine(4, 25, 2)).unwrap();
    let p = net.init_params();
    let h = dense_hessian(&net, &p).unwrap();
    let n = h.len();
    let mut r = common::rng(21);
    let d: Vec<f64> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
    let pre = Preconditioner::from_diag(1.0, d.clone()).unwrap();
    let opts = PowerOptions { max_iters: 20_000, tol: 1e-13 };
    let pi = lambda_max_preconditioned(&pre, &net, &p.values, HvpBackend::Exact, opts, &Start::Seed(1)).unwrap();
    let sym = DMatrix::from_fn(n, n, |i, j| d[i].sqrt() * h[i][j] * d[j].sqrt());
    let dense = SymmetricEigen::new(sym).eigenvalues.max();
    assert!((pi.lambda - dense).abs() <= 1e-6 * dense.abs(), "{} vs {dense}", pi.lambda);
}

// The Rayleigh value uᵀ(DH)u is bounded by the top eigenvalue of the
// symmetric part ½(DH + HD), not by λ_max(DH) = λ_max(D^½HD^½).
#[test]
fn rayleigh_value_of_dh_can_exceed_its_top_eigenvalue() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 100.0, 100.0]);
    let lmax = a.complex_eigenvalues().iter().map(|c| c.re).fold(f64::MIN, f64::max);
    assert!((lmax - 101.0).abs() < 1e-9);
    let sym_top = SymmetricEigen::new((&a + a.transpose()) * 0.5).eigenvalues.max();
    let best = (0..4000)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / 4000.0;
            let w = DVector::from_row_slice(&[t.cos(), t.sin()]);
            (w.transpose() * &a * &w)[(0, 0)]
        })
        .fold(f64::MIN, f64::max);
    assert!(best > 120.0, "rayleigh max {best}");
    assert!(best <= sym_top + 1e-9);
}

#[test]
fn lambda_grad_bounded_by_symmetric_part_along_adam_run() {
    let net = FnnTask::new(FnnTaskSpec::sine(4, 25, 6)).unwrap();
    let mut theta = net.init_params();
    let cfg = OptimizerConfig::adam(0.01, 0.9, 0.999);
    let mut st = OptimizerState::new(cfg.kind, &theta);
    for step in 0..30 {
        let (_, g) = net.value_and_gradient(&theta.values).unwrap();
        accumulate(&mut st, &g, &cfg);
        let pre = Preconditioner::for_optimizer(&cfg, &st, &theta.values, &g, step).unwrap();
        let lg = lambda_grad(&pre, &net, &theta.values, &g, HvpBackend::Exact).unwrap();
        let n = net.dim();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                precondition_hvp(&pre, &net, &theta.values, &e, HvpBackend::Exact).unwrap()
            })
            .collect();
        let a = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
        let top = SymmetricEigen::new((&a + a.transpose()) * 0.5).eigenvalues.max();
        assert!(lg <= top + 1e-9 * top.abs().max(1.0), "step {step}: {lg} > {top}");
        let delta = spikelab_core::optim::update_delta(&st, &theta.values, &g, &cfg, step);
        for (x, d) in theta.values.iter_mut().zip(&delta) {
            *x -= d;
        }
    }
}
