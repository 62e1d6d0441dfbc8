#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use spikelab_core::grad::{dense_hessian_raw, fd_gradient, hvp_raw, HvpBackend, Objective};
use spikelab_core::objectives::{FnnTask, FnnTaskSpec, Quadratic, QuadraticSpec, Target};
use spikelab_core::params::{dot, norm, ParamVector};
use spikelab_core::spectral::{lambda_max_symmetric, PowerOptions, Start};
use spikelab_core::theory::real_spectrum_check;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn small_teacher(seed: u64) -> FnnTask {
    FnnTask::new(FnnTaskSpec {
        input_dim: 3,
        width: 4,
        n_samples: 20,
        noise_std: 0.1,
        target: Target::LinearPlusDiagQuadratic,
        init_variance_scale: 1.0,
        seed,
    })
    .unwrap()
}

pub fn random_quadratic(rng: &mut ChaCha20Rng, n: usize) -> Quadratic {
    let eigenvalues = (0..n).map(|_| rng.random_range(-3.0..10.0)).collect();
    let offset = gaussian(rng, n);
    Quadratic::from_spec(&QuadraticSpec { eigenvalues, offset }).unwrap()
}

/// Named objectives covering every built-in loss surface.
pub fn objectives() -> Vec<(&'static str, Box<dyn Objective>)> {
    let mut r = rng(11);
    vec![
        ("quadratic", Box::new(random_quadratic(&mut r, 6)) as Box<dyn Objective>),
        ("fnn-sine-w5", Box::new(FnnTask::new(FnnTaskSpec::sine(5, 30, 3)).unwrap())),
        ("fnn-teacher-small", Box::new(small_teacher(4))),
    ]
}

pub type Suite = Result<String, String>;

/// |analytic − FD| / (1 + |FD|) ≤ 1e-5 on 20 random points per objective.
pub fn gradient_vs_fd() -> Suite {
    let mut worst = 0.0_f64;
    for (name, obj) in objectives() {
        let mut r = rng(100);
        for k in 0..20 {
            let theta = gaussian(&mut r, obj.dim());
            let (_, g) = obj.value_and_gradient(&theta).map_err(|e| e.to_string())?;
            let fd = fd_gradient(obj.as_ref(), &theta, 1e-6).map_err(|e| e.to_string())?;
            for (a, b) in g.iter().zip(&fd) {
                let err = (a - b).abs() / (1.0 + b.abs());
                worst = worst.max(err);
                if err > 1e-5 {
                    return Err(format!("{name} point {k}: analytic {a} vs fd {b} (err {err:.2e})"));
                }
            }
        }
    }
    Ok(format!("worst {worst:.2e}"))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

/// hvp(αv + βw) against αhvp(v) + βhvp(w): 1e-8 exact, 1e-4 central FD.
pub fn hvp_linearity() -> Suite {
    let mut worst = [0.0_f64; 2];
    for (name, obj) in objectives() {
        let mut r = rng(200);
        for _ in 0..10 {
            let n = obj.dim();
            let theta = gaussian(&mut r, n);
            let v = gaussian(&mut r, n);
            let w = gaussian(&mut r, n);
            let (a, b): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let mix: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            for (i, (backend, tol)) in [
                (HvpBackend::Exact, 1e-8),
                (HvpBackend::CentralFd { fd_step: None }, 1e-4),
            ]
            .into_iter()
            .enumerate()
            {
                let hv = hvp_raw(obj.as_ref(), &theta, &v, backend).map_err(|e| e.to_string())?;
                let hw = hvp_raw(obj.as_ref(), &theta, &w, backend).map_err(|e| e.to_string())?;
                let hm = hvp_raw(obj.as_ref(), &theta, &mix, backend).map_err(|e| e.to_string())?;
                let lin: Vec<f64> = hv.iter().zip(&hw).map(|(x, y)| a * x + b * y).collect();
                let e = rel(&hm, &lin);
                worst[i] = worst[i].max(e);
                if e > tol {
                    return Err(format!("{name} {backend:?}: relative error {e:.2e} > {tol:e}"));
                }
            }
        }
    }
    Ok(format!("worst exact {:.2e}, fd {:.2e}", worst[0], worst[1]))
}

/// vᵀH w against wᵀH v within 1e-6, relative to the Cauchy–Schwarz scale;
/// plus the assembled width-3 FD Hessian is symmetric to 1e-6.
pub fn hvp_symmetry() -> Suite {
    let mut worst = 0.0_f64;
    for (name, obj) in objectives() {
        let mut r = rng(300);
        for _ in 0..10 {
            let n = obj.dim();
            let theta = gaussian(&mut r, n);
            let v = gaussian(&mut r, n);
            let w = gaussian(&mut r, n);
            let hv = hvp_raw(obj.as_ref(), &theta, &v, HvpBackend::Exact).map_err(|e| e.to_string())?;
            let hw = hvp_raw(obj.as_ref(), &theta, &w, HvpBackend::Exact).map_err(|e| e.to_string())?;
            let (a, b) = (dot(&v, &hw), dot(&w, &hv));
            let scale = (norm(&v) * norm(&hw)).max(norm(&w) * norm(&hv)).max(f64::MIN_POSITIVE);
            let e = (a - b).abs() / scale;
            worst = worst.max(e);
            if e > 1e-6 {
                return Err(format!("{name}: vᵀHw={a} wᵀHv={b}"));
            }
        }
    }
    let net = FnnTask::new(FnnTaskSpec::sine(3, 20, 5)).unwrap();
    let p = net.init_params();
    let h = dense_hessian_raw(&net, &p, HvpBackend::CentralFd { fd_step: None }).map_err(|e| e.to_string())?;
    let hmax = h.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut asym = 0.0_f64;
    for i in 0..h.len() {
        for j in 0..h.len() {
            asym = asym.max((h[i][j] - h[j][i]).abs());
        }
    }
    if asym / hmax > 1e-6 {
        return Err(format!("width-3 FD Hessian asymmetry {:.2e}", asym / hmax));
    }
    Ok(format!("worst {worst:.2e}, dense asymmetry {:.2e}", asym / hmax))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(r: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(r));
    g.qr().q()
}

/// Symmetric `Q Λ Qᵀ` whose top eigenvalue leads every other by at least
/// 5% in magnitude.
pub fn gapped_symmetric(r: &mut ChaCha20Rng, n: usize) -> (DMatrix<f64>, f64) {
    let top: f64 = r.random_range(1.0..10.0);
    let mut lam: Vec<f64> = (1..n).map(|_| r.random_range(-0.95..0.95) * top).collect();
    lam.push(top);
    let q = random_orthogonal(r, n);
    let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lam)) * q.transpose();
    let m = (&m + m.transpose()) * 0.5;
    (m, top)
}

/// |λ_pi − λ_dense| ≤ 1e-6·|λ_dense| on 50 matrices of dimension ≤ 50.
pub fn power_vs_dense() -> Suite {
    let mut r = rng(400);
    let opts = PowerOptions { max_iters: 20_000, tol: 1e-14 };
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let n = r.random_range(2..=50);
        let (m, _) = gapped_symmetric(&mut r, n);
        let dense = SymmetricEigen::new(m.clone()).eigenvalues.max();
        let res = lambda_max_symmetric(
            |w| Ok((&m * nalgebra::DVector::from_column_slice(w)).iter().copied().collect()),
            n,
            opts,
            &Start::Seed(k),
        )
        .map_err(|e| e.to_string())?;
        let e = (res.lambda - dense).abs() / dense.abs();
        worst = worst.max(e);
        if e > 1e-6 {
            return Err(format!("matrix {k} (n={n}): power {} vs dense {dense}", res.lambda));
        }
    }
    Ok(format!("worst {worst:.2e}"))
}

/// eig(DH) real and equal to eig(D^½HD^½) within 1e-8 of the radius, for
/// random symmetric H (indefinite included) and positive d.
pub fn real_spectrum() -> Suite {
    let mut r = rng(500);
    let mut worst = (0.0_f64, 0.0_f64);
    for k in 0..30 {
        let n = r.random_range(2..=30);
        let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut r));
        let h = (&g + g.transpose()) * 0.5;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| h[(i, j)]).collect()).collect();
        let d: Vec<f64> = (0..n).map(|_| r.random_range(0.01..10.0)).collect();
        let rep = real_spectrum_check(&rows, &d).map_err(|e| e.to_string())?;
        worst = (worst.0.max(rep.max_imag_rel), worst.1.max(rep.max_mismatch_rel));
        if !rep.passed {
            return Err(format!(
                "case {k} (n={n}): imag {:.2e}, mismatch {:.2e}",
                rep.max_imag_rel, rep.max_mismatch_rel
            ));
        }
    }
    Ok(format!("worst imag {:.2e}, mismatch {:.2e}", worst.0, worst.1))
}

pub fn param(v: Vec<f64>) -> ParamVector {
    ParamVector::from_values(v)
}
