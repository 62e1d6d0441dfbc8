//! Numerical checkers for the stability results: the GD descent bound, the
//! heavy-ball stability interval, real spectra of preconditioned Hessians,
//! the five-stage theorem on the scalar quadratic, the exact loss-increase
//! criterion through the averaged Hessian, and instability under a
//! decaying learning rate.
//!
//! The scalar recursions are simulated on `ln|θ|` and `ln v` because the
//! iterates routinely pass below the smallest normal `f64`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{hvp_raw, HvpBackend, Objective};
use crate::objectives::Quadratic;
use crate::optim::{OptimizerKind, RunTrace};
use crate::params::{add_scaled, dot, norm};
use crate::spike::StageInputs;

/// Relative slack below which an inequality counts as violated.
pub const SLACK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub steps_checked: usize,
    pub steps_skipped: usize,
    pub violations: Vec<usize>,
    /// Smallest `rhs − lhs` seen; negative only when a step violates the bound.
    pub worst_slack: f64,
}

impl DescentReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `L(θ_{t+1}) ≤ L(θ_t) − η(1 − ηλ_max/2)‖g_t‖²` on every GD step
/// with `η < 2/λ_max`, allowing `1e-10·|L(θ_t)|` plus the rounding floor of
/// evaluating the loss near an offset minimiser.
pub fn check_descent_lemma(quad: &Quadratic, trace: &RunTrace) -> Result<DescentReport> {
    if trace.config.kind != OptimizerKind::Gd {
        return Err(Error::OracleMisuse(format!(
            "descent bound applies to gd traces, got {}",
            trace.config.kind
        )));
    }
    let lmax = quad.lambda_max();
    let before = trace.losses_before();
    // θ − c carries an absolute error of order ε‖c‖, which moves the loss by
    // up to that times Σλᵢ|θᵢ − cᵢ| ≤ √n‖g‖.
    let n = quad.offset().len() as f64;
    let floor_per_grad = 16.0 * f64::EPSILON * n.sqrt() * crate::params::norm(quad.offset());
    let mut rep = DescentReport {
        steps_checked: 0,
        steps_skipped: 0,
        violations: Vec::new(),
        worst_slack: f64::INFINITY,
    };
    for (r, &l0) in trace.records.iter().zip(&before) {
        let eta = r.eta_t;
        if !(eta < 2.0 / lmax) {
            rep.steps_skipped += 1;
            continue;
        }
        let rhs = l0 - eta * (1.0 - eta * lmax / 2.0) * r.grad_norm * r.grad_norm + 1e-10 * l0.abs() + floor_per_grad * r.grad_norm;
        let slack = rhs - r.loss;
        rep.steps_checked += 1;
        rep.worst_slack = rep.worst_slack.min(slack);
        if slack < 0.0 {
            rep.violations.push(r.step);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
}

/// `λ` at which heavy-ball momentum loses stability: `(2/η)(1+β₁)/(1−β₁)`.
pub fn momentum_boundary(eta: f64, beta1: f64) -> f64 {
    2.0 / eta * (1.0 + beta1) / (1.0 - beta1)
}

/// Simulates `δ_{t+1} = (1 + β₁ − η(1−β₁)λ) δ_t − β₁ δ_{t−1}` from
/// `δ₀ = δ₋₁ = 1`. Stable once the envelope `max(|δ_t|, |δ_{t−1}|)` is
/// below 1e-3 at the horizon; unstable as soon as it passes 1e3.
pub fn momentum_stability_classify(lambda: f64, eta: f64, beta1: f64, horizon: usize) -> Result<Stability> {
    if !(lambda > 0.0 && eta > 0.0) || !(0.0..1.0).contains(&beta1) {
        return Err(Error::InvalidParameter(format!(
            "need lambda, eta > 0 and beta1 in [0, 1); got {lambda}, {eta}, {beta1}"
        )));
    }
    let a = 1.0 + beta1 - eta * (1.0 - beta1) * lambda;
    let (mut prev, mut cur) = (1.0_f64, 1.0_f64);
    for _ in 0..horizon {
        let next = a * cur - beta1 * prev;
        prev = cur;
        cur = next;
        if cur.abs().max(prev.abs()) > 1e3 {
            return Ok(Stability::Unstable);
        }
    }
    let env = cur.abs().max(prev.abs());
    if env < 1e-3 {
        Ok(Stability::Stable)
    } else {
        Err(Error::Indeterminate(format!(
            "envelope {env:.3e} after {horizon} steps at lambda {lambda}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCheck {
    pub name: String,
    pub holds: bool,
    /// Smallest relative (log-scale) slack over the checked steps.
    pub worst_slack: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveStageCertificate {
    pub theta0: f64,
    pub eta: f64,
    pub beta2: f64,
    pub hypothesis_ok: bool,
    /// `1/ln(1/β₂)` and `1/ln(2|θ₀|/η) + 1/ln 2`.
    pub hypothesis_lhs: f64,
    pub hypothesis_rhs: f64,
    pub t1_formula: f64,
    pub s: f64,
    pub delta: f64,
    pub q: Option<f64>,
    pub max_steps: usize,
    /// Simulated `t0 … t5`.
    pub boundaries: [Option<usize>; 6],
    /// True when `t5` is the end of the simulated trace rather than a
    /// renewed crossing.
    pub t5_is_trace_end: bool,
    pub checks: Vec<StageCheck>,
    /// `(ln|θ_t|, ln v_t)` for `t = 0 ..= max_steps`.
    #[serde(skip)]
    pub trajectory: Vec<(f64, f64)>,
}

impl FiveStageCertificate {
    pub fn ordered(&self) -> bool {
        self.boundaries.windows(2).all(|w| matches!(w, [Some(a), Some(b)] if a < b))
    }

    pub fn passed(&self) -> bool {
        self.hypothesis_ok && self.ordered() && self.checks.iter().all(|c| c.holds)
    }

    /// Per-step series for the stage segmenter. Record `t` carries `v_t`,
    /// `λ̂ = 1/√v_t` and `ln L(θ_{t+1})`; the logarithm keeps every loss
    /// comparison valid after `θ` underflows.
    pub fn stage_inputs(&self) -> StageInputs {
        let n = self.trajectory.len().saturating_sub(1);
        let lam: Vec<Option<f64>> = self.trajectory[..n].iter().map(|&(_, lv)| Some((-0.5 * lv).exp())).collect();
        StageInputs {
            loss: self.trajectory[1..].iter().map(|&(lt, _)| 2.0 * lt - std::f64::consts::LN_2).collect(),
            v: self.trajectory[..n].iter().map(|&(_, lv)| lv.exp()).collect(),
            lambda_max_hhat: lam.clone(),
            lambda_grad_hhat: lam,
            threshold: vec![2.0 / self.eta; n],
            beta2: self.beta2,
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln(eᵃ − eᵇ)` for `a > b`.
fn log_sub_exp(a: f64, b: f64) -> f64 {
    a + (-(b - a).exp()).ln_1p()
}

/// `(ln|θ_t|, ln v_t)` for the lagged recursion
/// `θ_{t+1} = (1 − η_t/√v_t) θ_t`, `v_{t+1} = β₂ v_t + (1−β₂) θ_t²`, `v₀ = θ₀²`.
pub fn lagged_trajectory(theta0: f64, beta2: f64, steps: usize, eta_at: impl Fn(usize) -> f64) -> Vec<(f64, f64)> {
    let (lb, l1b) = (beta2.ln(), (1.0 - beta2).ln());
    let mut lt = theta0.abs().ln();
    let mut lv = 2.0 * lt;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((lt, lv));
    for t in 0..steps {
        let f = 1.0 - eta_at(t) * (-0.5 * lv).exp();
        let lv_next = log_add_exp(lb + lv, l1b + 2.0 * lt);
        lt += f.abs().ln();
        lv = lv_next;
        out.push((lt, lv));
    }
    out
}

/// Simulates the `β₁ = 0`, `ε = 0`, uncorrected Adam recursion on `½θ²` and
/// checks the five-stage quantities. `max_steps` defaults to `10·t₁`.
pub fn five_stage_certificate(theta0: f64, eta: f64, beta2: f64, max_steps: Option<usize>) -> Result<FiveStageCertificate> {
    let a = theta0.abs();
    if !(eta > 0.0) || !(beta2 > 0.0 && beta2 < 1.0) || !theta0.is_finite() {
        return Err(Error::InvalidParameter(format!("need eta > 0, beta2 in (0, 1); got {eta}, {beta2}")));
    }
    if !(a > eta / 2.0) {
        return Err(Error::InvalidParameter(format!("need |theta0| > eta/2; got {theta0} with eta {eta}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let hyp_lhs = 1.0 / (1.0 / beta2).ln();
    let hyp_rhs = 1.0 / (2.0 * a / eta).ln() + 1.0 / ln2;
    let hypothesis_ok = hyp_lhs > hyp_rhs;
    let t1_formula = 2.0 * (a / eta + 0.5).ln() / (1.0 / beta2).ln();
    let s = (eta / (2.0 * a)).max((1.0 - eta / a).abs());
    let t1 = t1_formula.floor() as usize;
    let delta = s.powi(t1 as i32) * a;
    let n = max_steps.unwrap_or((10.0 * t1_formula).ceil() as usize + 10);
    let traj = lagged_trajectory(theta0, beta2, n, |_| eta);

    let mut cert = FiveStageCertificate {
        theta0,
        eta,
        beta2,
        hypothesis_ok,
        hypothesis_lhs: hyp_lhs,
        hypothesis_rhs: hyp_rhs,
        t1_formula,
        s,
        delta,
        q: None,
        max_steps: n,
        boundaries: [Some(0), Some(t1), None, None, None, None],
        t5_is_trace_end: false,
        checks: Vec::new(),
        trajectory: Vec::new(),
    };

    let lhalf = 2.0 * (eta / 2.0).ln();
    let lv = |t: usize| traj[t].1;
    let lt = |t: usize| traj[t].0;
    let t2 = (t1 + 1..=n).find(|&t| lv(t) < lhalf);
    let t3 = t2.and_then(|t2| (t2 + 1..n).find(|&t| lv(t + 1) > lv(t)));
    let t4 = t3.and_then(|t3| (t3 + 1..=n).find(|&t| lv(t) > lhalf));
    let (t5, end) = match t4 {
        Some(t4) => match (t4 + 1..=n).find(|&t| lv(t) < lhalf) {
            Some(t5) => (Some(t5), false),
            None if t4 < n => (Some(n), true),
            None => (None, false),
        },
        None => (None, false),
    };
    cert.boundaries[2..].copy_from_slice(&[t2, t3, t4, t5]);
    cert.t5_is_trace_end = end;

    if hypothesis_ok {
        let la = a.ln();
        let ls = s.ln();
        let upto = t1.min(n);
        let worst = (0..=upto).map(|t| t as f64 * ls + la - lt(t)).fold(f64::INFINITY, f64::min);
        cert.checks.push(stage_check("stage1-contraction", worst, upto + 1));

        if let Some(t2) = t2 {
            let l_delta2 = 2.0 * delta.ln();
            let lv1 = lv(t1 + 1);
            let lb = beta2.ln();
            let worst = (t1 + 1..=t2)
                .map(|t| {
                    let k = (t - t1 - 1) as f64 * lb;
                    let lbound = if lv1 >= l_delta2 {
                        if lv1 == l_delta2 {
                            l_delta2
                        } else {
                            log_add_exp(log_sub_exp(lv1, l_delta2) + k, l_delta2)
                        }
                    } else {
                        log_sub_exp(l_delta2, log_sub_exp(l_delta2, lv1) + k)
                    };
                    lbound - lv(t)
                })
                .fold(f64::INFINITY, f64::min);
            cert.checks.push(stage_check("stage2-envelope", worst, t2 - t1));

            let q = eta * (-0.5 * lv(t2)).exp() - 1.0;
            cert.q = Some(q);
            if let Some(t3) = t3 {
                let lq = q.ln();
                let worst = (t2..t3)
                    .map(|t| lt(t) - ((t - t2) as f64 * lq + lt(t2)))
                    .fold(f64::INFINITY, f64::min);
                let mut c = stage_check("stage3-growth", worst, t3 - t2);
                c.holds &= q > 1.0;
                cert.checks.push(c);
            }
        }
    }
    cert.trajectory = traj;
    Ok(cert)
}

fn stage_check(name: &str, worst: f64, steps: usize) -> StageCheck {
    StageCheck { name: name.into(), holds: worst >= -SLACK_TOL, worst_slack: worst, steps }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `2∫₀¹(1−s) f(s) ds` by `n`-point Gauss–Legendre.
pub fn weighted_average<F: FnMut(f64) -> Result<f64>>(n: usize, mut f: F) -> Result<f64> {
    let (x, w) = gauss_legendre(n);
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let s = 0.5 * (xi + 1.0);
        acc += wi * (1.0 - s) * f(s)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IffCheck {
    /// The GD step increased the loss.
    pub lhs: bool,
    /// `λ_grad(H̄) > 2/η`.
    pub rhs: bool,
    pub estimate: f64,
    /// Change in the estimate when the node count doubles.
    pub residual: f64,
    /// Half-width of the band around `2/η` where no verdict is drawn.
    pub guard: f64,
    pub determinate: bool,
}

impl IffCheck {
    pub fn agrees(&self) -> bool {
        self.lhs == self.rhs
    }
}

/// Compares the actual loss change of one GD step with `λ_grad` of the
/// averaged Hessian `H̄ = 2∫₀¹(1−s)∇²L(θ − sηg) ds`.
///
/// The guard band is four times the node-doubling residual plus the
/// rounding error of the computed loss difference, mapped to `λ` units.
pub fn spike_iff_check(obj: &dyn Objective, theta: &[f64], eta: f64, nodes: usize) -> Result<IffCheck> {
    if nodes == 0 || !(eta > 0.0) {
        return Err(Error::InvalidParameter("need nodes >= 1 and eta > 0".into()));
    }
    let (l0, g) = obj.value_and_gradient(theta)?;
    let gn = norm(&g);
    if gn == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let next = add_scaled(theta, -eta, &g);
    let l1 = obj.loss(&next)?;
    let u: Vec<f64> = g.iter().map(|x| x / gn).collect();
    let curv = |s: f64| -> Result<f64> {
        let p = add_scaled(theta, -s * eta, &g);
        Ok(dot(&u, &hvp_raw(obj, &p, &u, HvpBackend::Exact)?))
    };
    let coarse = weighted_average(nodes, curv)?;
    let fine = weighted_average(2 * nodes, curv)?;
    let residual = (fine - coarse).abs();
    let rounding = 2.0 * 8.0 * f64::EPSILON * (l0.abs() + l1.abs()) / (eta * eta * gn * gn);
    let guard = 4.0 * residual + rounding;
    let thr = 2.0 / eta;
    Ok(IffCheck {
        lhs: l1 > l0,
        rhs: fine > thr,
        estimate: fine,
        residual,
        guard,
        determinate: (fine - thr).abs() > guard,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IffSummary {
    pub steps: usize,
    pub determinate: usize,
    pub agree: usize,
    pub indeterminate: usize,
    pub loss_increases: usize,
    pub disagreements: Vec<usize>,
}

impl IffSummary {
    pub fn agreement(&self) -> f64 {
        if self.determinate == 0 {
            1.0
        } else {
            self.agree as f64 / self.determinate as f64
        }
    }
}

/// Runs GD for `steps` steps and applies [`spike_iff_check`] at each one.
pub fn iff_scan_gd(obj: &dyn Objective, theta0: &[f64], eta: f64, steps: usize, nodes: usize) -> Result<IffSummary> {
    let mut theta = theta0.to_vec();
    let mut sum = IffSummary::default();
    for t in 0..steps {
        let (_, g) = obj.value_and_gradient(&theta)?;
        match spike_iff_check(obj, &theta, eta, nodes) {
            Ok(c) => {
                sum.steps += 1;
                sum.loss_increases += c.lhs as usize;
                if c.determinate {
                    sum.determinate += 1;
                    if c.agrees() {
                        sum.agree += 1;
                    } else {
                        sum.disagreements.push(t);
                    }
                } else {
                    sum.indeterminate += 1;
                }
            }
            Err(Error::ZeroGradient) => break,
            Err(e) => return Err(e),
        }
        theta = add_scaled(&theta, -eta, &g);
        if theta.iter().any(|x| !x.is_finite()) {
            break;
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayWitness {
    pub theta0: f64,
    pub eta0: f64,
    pub alpha: f64,
    pub beta2: f64,
    pub max_steps: usize,
    /// First `t` with `|1 − η_t/√v_t| ≥ 1`.
    pub witness_step: Option<usize>,
    pub multiplier_at_witness: Option<f64>,
}

/// Runs the `β₁ = 0` recursion with `η_t = η₀(t+1)^(−α)` and reports the
/// first step violating `|1 − η_t/√v_t| < 1`. Absence within the budget is
/// reported, never asserted.
pub fn lr_decay_witness(theta0: f64, eta0: f64, alpha: f64, beta2: f64, max_steps: usize) -> Result<DecayWitness> {
    if !(theta0.abs() > 2.0 * eta0) || !(eta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("need |theta0| > 2 eta0 > 0; got {theta0}, {eta0}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) {
        return Err(Error::InvalidParameter(format!("need alpha, beta2 in (0, 1); got {alpha}, {beta2}")));
    }
    let eta_at = |t: usize| eta0 * ((t + 1) as f64).powf(-alpha);
    let (lb, l1b) = (beta2.ln(), (1.0 - beta2).ln());
    let mut lt = theta0.abs().ln();
    let mut lv = 2.0 * lt;
    let mut found = None;
    for t in 0..=max_steps {
        let f = 1.0 - eta_at(t) * (-0.5 * lv).exp();
        if f.abs() >= 1.0 {
            found = Some((t, f));
            break;
        }
        let lv_next = log_add_exp(lb + lv, l1b + 2.0 * lt);
        lt += f.abs().ln();
        lv = lv_next;
    }
    Ok(DecayWitness {
        theta0,
        eta0,
        alpha,
        beta2,
        max_steps,
        witness_step: found.map(|(t, _)| t),
        multiplier_at_witness: found.map(|(_, f)| f),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub spectral_radius: f64,
    /// `max |Im λ|` over the spectral radius.
    pub max_imag_rel: f64,
    /// Largest sorted-eigenvalue gap between `DH` and `D^½HD^½`, relative to the radius.
    pub max_mismatch_rel: f64,
    pub eigenvalues: Vec<f64>,
    pub passed: bool,
}

/// Eigenvalues of `diag(d)·H` against those of `diag(√d)·H·diag(√d)`.
pub fn real_spectrum_check(h: &[Vec<f64>], d: &[f64]) -> Result<SpectrumReport> {
    let n = h.len();
    if n > crate::grad::DENSE_LIMIT {
        return Err(Error::OracleSizeExceeded { n, limit: crate::grad::DENSE_LIMIT });
    }
    if d.len() != n || h.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: d.len() });
    }
    if d.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter("d must be positive and finite".into()));
    }
    let dh = DMatrix::from_fn(n, n, |i, j| d[i] * h[i][j]);
    let sym = DMatrix::from_fn(n, n, |i, j| d[i].sqrt() * h[i][j] * d[j].sqrt());
    let complex = dh.complex_eigenvalues();
    let mut re: Vec<f64> = complex.iter().map(|c| c.re).collect();
    let mut sy: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    re.sort_by(f64::total_cmp);
    sy.sort_by(f64::total_cmp);
    let radius = sy.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = if radius > 0.0 { radius } else { 1.0 };
    let max_imag = complex.iter().fold(0.0_f64, |m, c| m.max(c.im.abs()));
    let mismatch = re.iter().zip(&sy).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let max_imag_rel = max_imag / scale;
    let max_mismatch_rel = mismatch / scale;
    Ok(SpectrumReport {
        n,
        spectral_radius: radius,
        max_imag_rel,
        max_mismatch_rel,
        eigenvalues: sy,
        passed: max_imag_rel <= 1e-8 && max_mismatch_rel <= 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{run, OptimizerConfig};
    use crate::params::ParamVector;

    #[test]
    fn descent_bound_is_tight_on_scalars() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        for (eta, l1) in [(1.0, 0.0), (0.5, 0.125)] {
            let tr = run(&q, &ParamVector::from_values(vec![1.0]), &OptimizerConfig::gd(eta), 1, None, 0).unwrap();
            assert_eq!(tr.records[0].loss, l1);
            let rep = check_descent_lemma(&q, &tr).unwrap();
            assert!(rep.holds());
            assert!(rep.worst_slack.abs() <= 1e-10 * 0.5 + 1e-15);
        }
    }

    #[test]
    fn descent_bound_rejects_adam() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let tr = run(&q, &ParamVector::from_values(vec![1.0]), &OptimizerConfig::adam(0.1, 0.9, 0.99), 3, None, 0).unwrap();
        assert!(matches!(check_descent_lemma(&q, &tr), Err(Error::OracleMisuse(_))));
    }

    #[test]
    fn momentum_examples() {
        use Stability::*;
        assert_eq!(momentum_stability_classify(1.9, 1.0, 0.0, 10_000).unwrap(), Stable);
        assert_eq!(momentum_stability_classify(2.1, 1.0, 0.0, 10_000).unwrap(), Unstable);
        assert!((momentum_boundary(1.0, 0.9) - 38.0).abs() < 1e-12);
        assert_eq!(momentum_stability_classify(37.0, 1.0, 0.9, 10_000).unwrap(), Stable);
        assert_eq!(momentum_stability_classify(39.0, 1.0, 0.9, 10_000).unwrap(), Unstable);
        assert!((momentum_boundary(0.1, 0.5) - 60.0).abs() < 1e-12);
        assert_eq!(momentum_stability_classify(59.0, 0.1, 0.5, 10_000).unwrap(), Stable);
        assert_eq!(momentum_stability_classify(61.0, 0.1, 0.5, 10_000).unwrap(), Unstable);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 16, 32] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for k in 0..(2 * n) {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((got - want).abs() < 1e-12, "n={n} k={k}");
            }
        }
        // weights implement a probability measure on [0, 1]
        assert!((weighted_average(16, |_| Ok(1.0)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn certificate_refuses_boundary_start() {
        assert!(five_stage_certificate(0.075, 0.15, 0.99, None).is_err());
        assert!(lr_decay_witness(0.2, 0.1, 0.5, 0.99, 10).is_err());
    }

    #[test]
    fn spectrum_of_identity_is_d() {
        let h = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let rep = real_spectrum_check(&h, &[3.0, 0.5, 2.0]).unwrap();
        assert!(rep.passed);
        for (a, b) in rep.eigenvalues.iter().zip([0.5, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
