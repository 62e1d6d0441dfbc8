//! Curvature probes: dominant eigenvalues of the raw and preconditioned
//! Hessian by power iteration, and Rayleigh-type curvatures along the
//! gradient and the update.
//!
//! The preconditioned Hessian `Ĥ = D H` is not symmetric, but it is similar
//! to `D^½ H D^½`, so its dominant eigenvalue is computed on that form.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::grad::{hvp_raw, HvpBackend, Objective};
use crate::optim::{adafactor_direction, OptimizerConfig, OptimizerKind, OptimizerState, StepRecord};
use crate::params::{dot, norm, rms};

/// Diagonal preconditioner `D = diag(dᵢ)`; `scale` is the scalar factor
/// folded into every `dᵢ` (the momentum term for Adam).
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub scale: f64,
    pub diag: Vec<f64>,
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        Self { scale: c, diag: vec![c; n] }
    }

    pub fn from_diag(scale: f64, diag: Vec<f64>) -> Result<Self> {
        if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidParameter(
                "preconditioner entries must be positive and finite".into(),
            ));
        }
        Ok(Self { scale, diag })
    }

    /// `c_t / (√v̂ᵢ + ε)` with `c_t = (1/(1−β₁ᵗ))·(1−β₁)/(1+β₁)`; the
    /// `1/(1−β₁ᵗ)` factor is dropped without bias correction.
    pub fn adam(beta1: f64, t: usize, v_hat: &[f64], epsilon: f64, bias_correction: bool) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParameter("preconditioner needs t >= 1".into()));
        }
        let mut c = (1.0 - beta1) / (1.0 + beta1);
        if bias_correction {
            c /= 1.0 - beta1.powi(t as i32);
        }
        Self::from_diag(c, v_hat.iter().map(|v| c / (v.sqrt() + epsilon)).collect())
    }

    /// Preconditioner matching the optimizer's update at `step`, after the
    /// moment update and before the parameter update.
    pub fn for_optimizer(
        cfg: &OptimizerConfig,
        state: &OptimizerState,
        theta: &[f64],
        g: &[f64],
        step: usize,
    ) -> Result<Self> {
        let n = theta.len();
        let h = &cfg.hyper;
        let eps = cfg.epsilon_at(step);
        match state.kind {
            OptimizerKind::Gd => Ok(Self::identity(n)),
            OptimizerKind::HeavyBall => Ok(Self::scalar(n, (1.0 - h.beta1) / (1.0 + h.beta1))),
            OptimizerKind::Adam => Self::adam(h.beta1, state.t, &state.v_hat(cfg), eps, h.bias_correction),
            OptimizerKind::Rmsprop | OptimizerKind::Adagrad => {
                Self::from_diag(1.0, state.v.values.iter().map(|v| 1.0 / (v.sqrt() + eps)).collect())
            }
            OptimizerKind::Adafactor => {
                let p = &cfg.adafactor;
                let (_, clip) = adafactor_direction(&state.v.values, g, p);
                let rho = p.eps2.max(rms(theta));
                Self::from_diag(
                    rho,
                    state.v.values.iter().map(|v| rho / ((v.sqrt() + p.eps1) * clip)).collect(),
                )
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }
}

/// `D · (∇²L(θ) · w)`.
pub fn precondition_hvp(
    pre: &Preconditioner,
    obj: &dyn Objective,
    theta: &[f64],
    w: &[f64],
    backend: HvpBackend,
) -> Result<Vec<f64>> {
    ensure_dim(pre.dim(), w.len())?;
    let hw = hvp_raw(obj, theta, w, backend)?;
    Ok(hw.iter().zip(&pre.diag).map(|(h, d)| d * h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub enum Start {
    Seed(u64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult {
    pub lambda: f64,
    /// Unit-norm final iterate.
    pub vector: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
}

fn start_vector(dim: usize, start: &Start) -> Vec<f64> {
    let from_seed = |seed: u64| -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let v = match start {
        Start::Vector(v) if v.len() == dim && norm(v) > 0.0 && v.iter().all(|x| x.is_finite()) => v.clone(),
        Start::Vector(_) => from_seed(0),
        Start::Seed(s) => from_seed(*s),
    };
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}

/// Power iteration `v ← Av/‖Av‖` with the Rayleigh estimate `vᵀAv`.
/// Converged once successive estimates agree to `tol` relative.
pub fn power_iteration<F>(mut apply: F, dim: usize, opts: PowerOptions, start: &Start) -> Result<PowerResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::InvalidParameter("power iteration needs dim >= 1".into()));
    }
    let mut v = start_vector(dim, start);
    let mut lambda = f64::NAN;
    for k in 1..=opts.max_iters.max(1) {
        let w = apply(&v)?;
        ensure_dim(dim, w.len())?;
        let est = dot(&v, &w);
        let wn = norm(&w);
        if wn == 0.0 {
            if k == 1 {
                return Ok(PowerResult { lambda: 0.0, vector: v, converged: true, iters: k });
            }
            return Ok(PowerResult { lambda: est, vector: v, converged: true, iters: k });
        }
        let done = (est - lambda).abs() <= opts.tol * est.abs();
        lambda = est;
        v = w.iter().map(|x| x / wn).collect();
        if done {
            return Ok(PowerResult { lambda, vector: v, converged: true, iters: k });
        }
    }
    Ok(PowerResult { lambda, vector: v, converged: false, iters: opts.max_iters.max(1) })
}

/// Algebraically largest eigenvalue of a symmetric operator. Falls back to a
/// shifted pass when the dominant eigenvalue is negative.
pub fn lambda_max_symmetric<F>(mut apply: F, dim: usize, opts: PowerOptions, start: &Start) -> Result<PowerResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let first = power_iteration(&mut apply, dim, opts, start)?;
    if first.lambda >= 0.0 {
        return Ok(first);
    }
    let shift = first.lambda.abs();
    let mut second = power_iteration(
        |w| Ok(apply(w)?.iter().zip(w).map(|(a, x)| a + shift * x).collect()),
        dim,
        opts,
        start,
    )?;
    second.lambda -= shift;
    second.iters += first.iters;
    Ok(second)
}

/// `λ_max(∇²L(θ))`.
pub fn lambda_max_hessian(
    obj: &dyn Objective,
    theta: &[f64],
    backend: HvpBackend,
    opts: PowerOptions,
    start: &Start,
) -> Result<PowerResult> {
    lambda_max_symmetric(|w| hvp_raw(obj, theta, w, backend), theta.len(), opts, start)
}

/// `λ_max(D H)` through the similar matrix `D^½ H D^½`. The returned vector
/// lives in the symmetric coordinates; `D^½ y` is the eigenvector of `D H`.
pub fn lambda_max_preconditioned(
    pre: &Preconditioner,
    obj: &dyn Objective,
    theta: &[f64],
    backend: HvpBackend,
    opts: PowerOptions,
    start: &Start,
) -> Result<PowerResult> {
    ensure_dim(pre.dim(), theta.len())?;
    let root: Vec<f64> = pre.diag.iter().map(|d| d.sqrt()).collect();
    lambda_max_symmetric(
        |w| {
            let x: Vec<f64> = w.iter().zip(&root).map(|(w, r)| w * r).collect();
            let hx = hvp_raw(obj, theta, &x, backend)?;
            Ok(hx.iter().zip(&root).map(|(h, r)| h * r).collect())
        },
        theta.len(),
        opts,
        start,
    )
}

/// `dᵀ Ĥ d / ‖d‖²` for a direction `d`.
pub fn directional_curvature(
    pre: &Preconditioner,
    obj: &dyn Objective,
    theta: &[f64],
    d: &[f64],
    backend: HvpBackend,
) -> Result<f64> {
    let nd = norm(d);
    if nd == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let unit: Vec<f64> = d.iter().map(|x| x / nd).collect();
    let hd = precondition_hvp(pre, obj, theta, &unit, backend)?;
    Ok(dot(&unit, &hd))
}

/// Curvature of `Ĥ` along the gradient.
pub fn lambda_grad(pre: &Preconditioner, obj: &dyn Objective, theta: &[f64], g: &[f64], backend: HvpBackend) -> Result<f64> {
    directional_curvature(pre, obj, theta, g, backend)
}

/// Curvature of `Ĥ` along the update vector `u = m̂/(√v̂+ε)`.
pub fn lambda_update(pre: &Preconditioner, obj: &dyn Objective, theta: &[f64], u: &[f64], backend: HvpBackend) -> Result<f64> {
    directional_curvature(pre, obj, theta, u, backend)
}

/// Minimum of three consecutive values centred on `index`.
pub fn sustained_predictor(series: &[f64], index: usize) -> Result<f64> {
    if index == 0 || index + 1 >= series.len() {
        return Err(Error::BoundaryUndefined { index, len: series.len() });
    }
    Ok(series[index - 1].min(series[index]).min(series[index + 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    /// Probe cadence in steps; 0 disables probing.
    pub every: usize,
    pub hessian: bool,
    pub preconditioned: bool,
    pub grad: bool,
    pub update: bool,
    pub power: PowerOptions,
    pub backend_fd: bool,
    pub warm_start: bool,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self {
            every: 1,
            hessian: true,
            preconditioned: true,
            grad: true,
            update: true,
            power: PowerOptions::default(),
            backend_fd: false,
            warm_start: true,
        }
    }
}

impl ProbePlan {
    pub fn every(k: usize) -> Self {
        Self { every: k, ..Self::default() }
    }

    pub fn due(&self, step: usize) -> bool {
        self.every > 0 && step.is_multiple_of(self.every)
    }

    fn backend(&self) -> HvpBackend {
        if self.backend_fd {
            HvpBackend::CentralFd { fd_step: None }
        } else {
            HvpBackend::Exact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub lambda_max_h: Option<f64>,
    pub lambda_max_hhat: Option<f64>,
    pub lambda_grad_hhat: Option<f64>,
    pub lambda_update_hhat: Option<f64>,
    /// `2/η_t`.
    pub threshold: f64,
    pub power_iters_used: usize,
    pub converged: bool,
}

/// Warm-start vectors carried between probes of one run.
#[derive(Debug, Clone, Default)]
pub struct ProbeState {
    h: Option<Vec<f64>>,
    hhat: Option<Vec<f64>>,
}

/// Seed for the probe at `step` of a run seeded with `seed`.
pub fn probe_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_add(0x632B_E59B_D9B4_E019)
}

#[allow(clippy::too_many_arguments)]
pub fn probe(
    plan: &ProbePlan,
    obj: &dyn Objective,
    theta: &[f64],
    g: &[f64],
    u: &[f64],
    pre: &Preconditioner,
    eta: f64,
    step: usize,
    seed: u64,
    warm: &mut ProbeState,
) -> Result<ProbeRecord> {
    let backend = plan.backend();
    let fresh = Start::Seed(probe_seed(seed, step));
    let pick = |prev: &Option<Vec<f64>>| match (plan.warm_start, prev) {
        (true, Some(v)) => Start::Vector(v.clone()),
        _ => fresh.clone(),
    };
    let mut rec = ProbeRecord {
        step,
        lambda_max_h: None,
        lambda_max_hhat: None,
        lambda_grad_hhat: None,
        lambda_update_hhat: None,
        threshold: 2.0 / eta,
        power_iters_used: 0,
        converged: true,
    };
    if plan.hessian {
        let r = lambda_max_hessian(obj, theta, backend, plan.power, &pick(&warm.h))?;
        rec.lambda_max_h = Some(r.lambda);
        rec.power_iters_used += r.iters;
        rec.converged &= r.converged;
        warm.h = Some(r.vector);
    }
    if plan.preconditioned {
        let r = lambda_max_preconditioned(pre, obj, theta, backend, plan.power, &pick(&warm.hhat))?;
        rec.lambda_max_hhat = Some(r.lambda);
        rec.power_iters_used += r.iters;
        rec.converged &= r.converged;
        warm.hhat = Some(r.vector);
    }
    if plan.grad {
        rec.lambda_grad_hhat = match lambda_grad(pre, obj, theta, g, backend) {
            Ok(x) => Some(x),
            Err(Error::ZeroGradient) => None,
            Err(e) => return Err(e),
        };
    }
    if plan.update {
        rec.lambda_update_hhat = match lambda_update(pre, obj, theta, u, backend) {
            Ok(x) => Some(x),
            Err(Error::ZeroGradient) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(rec)
}

/// Fills `lambda_grad_sustained` over consecutive probe samples; endpoints
/// and samples adjacent to a missing value stay empty.
pub fn fill_sustained(records: &mut [StepRecord]) {
    let idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.probe.is_some())
        .map(|(i, _)| i)
        .collect();
    let series: Vec<Option<f64>> = idx
        .iter()
        .map(|&i| records[i].probe.as_ref().and_then(|p| p.lambda_grad_hhat))
        .collect();
    for j in 1..series.len().saturating_sub(1) {
        if let (Some(a), Some(b), Some(c)) = (series[j - 1], series[j], series[j + 1]) {
            records[idx[j]].lambda_grad_sustained = sustained_predictor(&[a, b, c], 1).ok();
        }
    }
}
