//! Gradients and Hessian-vector products.
//!
//! Every [`Objective`] supplies its own closed-form gradient and exact HVP.
//! The central finite-difference backend exists as an independent check and
//! for objectives plugged in from outside the crate.

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::params::{add_scaled, norm, Block, ParamVector};

/// Largest dimension accepted by [`dense_hessian`].
pub const DENSE_LIMIT: usize = 200;

/// A twice-differentiable loss surface.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Named partition of the parameter vector.
    fn blocks(&self) -> Vec<Block> {
        vec![Block::new("theta", 0, self.dim())]
    }

    fn loss(&self, theta: &[f64]) -> Result<f64>;

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Exact `∇²L(theta) · v`.
    fn hvp_exact(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HvpBackend {
    #[default]
    Exact,
    /// Central difference of gradients with step `fd_step / ‖v‖`.
    /// `None` picks `√ε_mach · (1 + ‖θ‖)`.
    CentralFd { fd_step: Option<f64> },
}

#[derive(Debug, Clone)]
pub struct HvpRequest<'a> {
    pub point: &'a ParamVector,
    pub direction: &'a ParamVector,
    pub backend: HvpBackend,
}

pub fn default_fd_step(theta: &[f64]) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + norm(theta))
}

pub fn gradient(obj: &dyn Objective, point: &ParamVector) -> Result<ParamVector> {
    ensure_dim(obj.dim(), point.len())?;
    ensure_finite(&point.values, "parameters")?;
    let (_, g) = obj.value_and_gradient(&point.values)?;
    ensure_finite(&g, "gradient")?;
    Ok(point.like(g))
}

pub fn hvp(obj: &dyn Objective, req: &HvpRequest<'_>) -> Result<ParamVector> {
    ensure_dim(obj.dim(), req.point.len())?;
    ensure_dim(obj.dim(), req.direction.len())?;
    let hv = hvp_raw(obj, &req.point.values, &req.direction.values, req.backend)?;
    Ok(req.point.like(hv))
}

/// Slice-level HVP used by the probes; validates the direction and output.
pub fn hvp_raw(obj: &dyn Objective, theta: &[f64], v: &[f64], backend: HvpBackend) -> Result<Vec<f64>> {
    ensure_finite(theta, "parameters")?;
    let vn = norm(v);
    if vn == 0.0 {
        return Err(Error::InvalidDirection);
    }
    ensure_finite(v, "direction")?;
    let hv = match backend {
        HvpBackend::Exact => obj.hvp_exact(theta, v)?,
        HvpBackend::CentralFd { fd_step } => {
            let step = fd_step.unwrap_or_else(|| default_fd_step(theta));
            if !(step > 0.0) {
                return Err(Error::InvalidParameter(format!("fd_step must be > 0, got {step}")));
            }
            let h = step / vn;
            let (_, gp) = obj.value_and_gradient(&add_scaled(theta, h, v))?;
            let (_, gm) = obj.value_and_gradient(&add_scaled(theta, -h, v))?;
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        }
    };
    ensure_finite(&hv, "hessian-vector product")?;
    Ok(hv)
}

/// Dense Hessian assembled column by column from HVPs on unit vectors.
/// Returned row-major and symmetrized; [`dense_hessian_raw`] skips the
/// symmetrization so asymmetry can be measured.
pub fn dense_hessian(obj: &dyn Objective, point: &ParamVector) -> Result<Vec<Vec<f64>>> {
    let mut h = dense_hessian_raw(obj, point, HvpBackend::Exact)?;
    let n = h.len();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    Ok(h)
}

pub fn dense_hessian_raw(obj: &dyn Objective, point: &ParamVector, backend: HvpBackend) -> Result<Vec<Vec<f64>>> {
    let n = obj.dim();
    if n > DENSE_LIMIT {
        return Err(Error::OracleSizeExceeded { n, limit: DENSE_LIMIT });
    }
    ensure_dim(n, point.len())?;
    let mut h = vec![vec![0.0; n]; n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = hvp_raw(obj, &point.values, &e, backend)?;
        for i in 0..n {
            h[i][j] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(h)
}

/// Central finite-difference gradient of the loss, one coordinate at a time.
pub fn fd_gradient(obj: &dyn Objective, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let lp = obj.loss(&x)?;
        x[i] = theta[i] - h;
        let lm = obj.loss(&x)?;
        x[i] = theta[i];
        g.push((lp - lm) / (2.0 * h));
    }
    Ok(g)
}
