//! `verify <theorem>`: run one oracle and produce a certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use spikelab_core::objectives::{FnnTask, FnnTaskSpec, Quadratic, QuadraticSpec};
use spikelab_core::optim::{run, OptimizerConfig};
use spikelab_core::params::ParamVector;
use spikelab_core::theory::{
    check_descent_lemma, five_stage_certificate, iff_scan_gd, lr_decay_witness, momentum_boundary,
    momentum_stability_classify, real_spectrum_check, Stability,
};
use spikelab_core::Error as CoreError;

use crate::analysis::SCHEMA_VERSION;
use crate::error::{CliError, Result};
use crate::exec::{five_stage_certificate_json, five_stage_verdict, lr_decay_certificate_json, lr_decay_verdict, Certificate, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Theorem {
    Descent,
    MomentumBoundary,
    FiveStage,
    SpikeIff,
    LrDecay,
    RealSpectrum,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::Descent => "descent",
            Theorem::MomentumBoundary => "momentum-boundary",
            Theorem::FiveStage => "five-stage",
            Theorem::SpikeIff => "spike-iff",
            Theorem::LrDecay => "lr-decay",
            Theorem::RealSpectrum => "real-spectrum",
        }
    }
}

/// Parameters shared by all oracles; each one reads the subset it needs and
/// falls back to its own defaults.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct VerifyParams {
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Learning-rate decay exponent (lr-decay).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Comma-separated Hessian eigenvalues (descent, spike-iff).
    #[arg(long)]
    pub eigenvalues: Option<String>,
    /// Optimizer steps to check (descent, spike-iff).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Recursion horizon of the momentum classifier.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Relative half-width of the bracket around the momentum boundary.
    #[arg(long)]
    pub band: Option<f64>,
    /// Network width of the spike-iff sine task.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Gauss-Legendre nodes for the averaged Hessian.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Matrix size (real-spectrum).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Random cases (real-spectrum).
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub struct Outcome {
    pub verdict: Verdict,
    pub worst_slack: Option<f64>,
    pub message: String,
    pub certificate: serde_json::Value,
}

fn cert<T: Serialize>(theorem: &'static str, verdict: Verdict, worst_slack: Option<f64>, detail: T) -> Result<serde_json::Value> {
    Certificate { schema_version: SCHEMA_VERSION, theorem, verdict, worst_slack, detail }.to_json()
}

fn skipped(theorem: &'static str, why: String, detail: serde_json::Value) -> Result<Outcome> {
    let certificate = cert(theorem, Verdict::Skipped, None, json!({ "reason": why, "params": detail }))?;
    Ok(Outcome { verdict: Verdict::Skipped, worst_slack: None, message: why, certificate })
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn eigenvalues(p: &VerifyParams) -> Result<Option<Vec<f64>>> {
    p.eigenvalues
        .as_deref()
        .map(|s| crate::config::parse_list(s).map_err(|e| bad(format!("--eigenvalues: {e}"))))
        .transpose()
}

pub fn verify(theorem: Theorem, p: &VerifyParams) -> Result<Outcome> {
    match theorem {
        Theorem::Descent => descent(p),
        Theorem::MomentumBoundary => momentum(p),
        Theorem::FiveStage => five_stage(p),
        Theorem::SpikeIff => spike_iff(p),
        Theorem::LrDecay => lr_decay(p),
        Theorem::RealSpectrum => real_spectrum(p),
    }
}

fn descent(p: &VerifyParams) -> Result<Outcome> {
    let eig = eigenvalues(p)?.unwrap_or(vec![1.0, 4.0, 10.0]);
    let eta = p.eta.unwrap_or(0.15);
    let steps = p.steps.unwrap_or(200);
    let q = Quadratic::from_spec(&QuadraticSpec { eigenvalues: eig.clone(), offset: Vec::new() })?;
    let theta0 = vec![p.theta0.unwrap_or(1.0); eig.len()];
    if !(eta > 0.0) {
        return Err(bad("--eta must be > 0"));
    }
    if eta >= 2.0 / q.lambda_max() {
        let why = format!("eta {eta} >= 2/lambda_max = {}", 2.0 / q.lambda_max());
        return skipped("descent", why, json!({ "eta": eta, "eigenvalues": eig }));
    }
    let tr = run(&q, &ParamVector::from_values(theta0), &OptimizerConfig::gd(eta), steps, None, p.seed)?;
    let rep = check_descent_lemma(&q, &tr)?;
    let verdict = if rep.holds() { Verdict::Pass } else { Verdict::Fail };
    let message = format!("{} steps checked, {} violations", rep.steps_checked, rep.violations.len());
    let certificate = cert("descent", verdict, Some(rep.worst_slack), json!({ "eta": eta, "eigenvalues": eig, "report": rep }))?;
    Ok(Outcome { verdict, worst_slack: Some(rep.worst_slack), message, certificate })
}

fn momentum(p: &VerifyParams) -> Result<Outcome> {
    let eta = p.eta.unwrap_or(1.0);
    let beta1 = p.beta1.unwrap_or(0.9);
    let band = p.band.unwrap_or(0.01);
    let horizon = p.horizon.unwrap_or(100_000);
    if !(eta > 0.0) || !(0.0..1.0).contains(&beta1) || !(band > 0.0 && band < 1.0) {
        return Err(bad("need eta > 0, beta1 in [0, 1) and band in (0, 1)"));
    }
    let b = momentum_boundary(eta, beta1);
    let (lo, hi) = (b * (1.0 - band), b * (1.0 + band));
    let classify = |l: f64| match momentum_stability_classify(l, eta, beta1, horizon) {
        Ok(s) => Ok(Some(s)),
        Err(CoreError::Indeterminate(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let (below, above) = (classify(lo)?, classify(hi)?);
    let ok = below == Some(Stability::Stable) && above == Some(Stability::Unstable);
    let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
    let message = format!("boundary {b} bracketed by [{lo}, {hi}]: below {below:?}, above {above:?}");
    let certificate = cert(
        "momentum-boundary",
        verdict,
        None,
        json!({ "eta": eta, "beta1": beta1, "boundary": b, "band": band, "horizon": horizon,
                "below": { "lambda": lo, "class": format!("{below:?}") },
                "above": { "lambda": hi, "class": format!("{above:?}") } }),
    )?;
    Ok(Outcome { verdict, worst_slack: None, message, certificate })
}

fn five_stage(p: &VerifyParams) -> Result<Outcome> {
    let (theta0, eta, beta2) = (p.theta0.unwrap_or(10.0), p.eta.unwrap_or(0.15), p.beta2.unwrap_or(0.99));
    if !(eta > 0.0) || !(beta2 > 0.0 && beta2 < 1.0) || !theta0.is_finite() {
        return Err(bad("need eta > 0, beta2 in (0, 1) and a finite theta0"));
    }
    if !(theta0.abs() > eta / 2.0) {
        let why = format!("|theta0| = {} <= eta/2 = {}", theta0.abs(), eta / 2.0);
        return skipped("five-stage", why, json!({ "theta0": theta0, "eta": eta, "beta2": beta2 }));
    }
    let c = five_stage_certificate(theta0, eta, beta2, p.max_steps)?;
    let (verdict, worst) = five_stage_verdict(&c);
    let message = if verdict == Verdict::Skipped {
        format!("1/ln(1/beta2) = {:.4} <= {:.4}", c.hypothesis_lhs, c.hypothesis_rhs)
    } else {
        format!("boundaries {:?}", c.boundaries.map(|b| b.map_or(-1, |x| x as i64)))
    };
    Ok(Outcome { verdict, worst_slack: worst, message, certificate: five_stage_certificate_json(&c)? })
}

fn spike_iff(p: &VerifyParams) -> Result<Outcome> {
    let steps = p.steps.unwrap_or(500);
    let nodes = p.nodes.unwrap_or(16);
    let eta = p.eta.unwrap_or(0.08);
    if !(eta > 0.0) || nodes == 0 || steps == 0 {
        return Err(bad("need eta > 0 and positive steps, nodes"));
    }
    // Exact on quadratics; the sine network allows 1% of determinate steps to disagree.
    let (sum, required, task) = match eigenvalues(p)? {
        Some(eig) => {
            let q = Quadratic::from_spec(&QuadraticSpec { eigenvalues: eig.clone(), offset: Vec::new() })?;
            let th = vec![p.theta0.unwrap_or(1.0); eig.len()];
            (iff_scan_gd(&q, &th, eta, steps, nodes)?, 1.0, json!({ "quadratic": eig }))
        }
        None => {
            let spec = FnnTaskSpec::sine(p.width.unwrap_or(20), p.n_samples.unwrap_or(200), p.seed);
            let net = FnnTask::new(spec.clone())?;
            (iff_scan_gd(&net, &net.init_params().values, eta, steps, nodes)?, 0.99, json!({ "fnn": spec }))
        }
    };
    let verdict = if sum.agreement() >= required { Verdict::Pass } else { Verdict::Fail };
    let message = format!(
        "{}/{} determinate steps agree ({} indeterminate, {} loss increases), required {:.0}%",
        sum.agree,
        sum.determinate,
        sum.indeterminate,
        sum.loss_increases,
        required * 100.0
    );
    let certificate = cert(
        "spike-iff",
        verdict,
        None,
        json!({ "task": task, "eta": eta, "nodes": nodes, "agreement": sum.agreement(), "required": required, "summary": sum }),
    )?;
    Ok(Outcome { verdict, worst_slack: None, message, certificate })
}

fn lr_decay(p: &VerifyParams) -> Result<Outcome> {
    let (theta0, eta, alpha, beta2) =
        (p.theta0.unwrap_or(1.0), p.eta.unwrap_or(0.1), p.alpha.unwrap_or(0.5), p.beta2.unwrap_or(0.9999));
    let budget = p.max_steps.unwrap_or(crate::exec::LR_DECAY_DEFAULT_BUDGET);
    if !(beta2 > 0.0 && beta2 < 1.0) || !(eta > 0.0) {
        return Err(bad("need eta > 0 and beta2 in (0, 1)"));
    }
    if !(theta0.abs() > 2.0 * eta) || !(alpha > 0.0 && alpha < 1.0) {
        let why = format!("need |theta0| > 2 eta and alpha in (0, 1); got {theta0}, {eta}, {alpha}");
        return skipped("lr-decay", why, json!({ "theta0": theta0, "eta": eta, "alpha": alpha, "beta2": beta2 }));
    }
    let w = lr_decay_witness(theta0, eta, alpha, beta2, budget)?;
    let verdict = lr_decay_verdict(&w);
    let slack = w.multiplier_at_witness.map(|m| m.abs() - 1.0);
    let message = match w.witness_step {
        Some(t) => format!("witness at step {t}, multiplier {:.6}", w.multiplier_at_witness.unwrap_or(f64::NAN)),
        None => format!("no witness within {budget} steps"),
    };
    Ok(Outcome { verdict, worst_slack: slack, message, certificate: lr_decay_certificate_json(&w)? })
}

fn real_spectrum(p: &VerifyParams) -> Result<Outcome> {
    let n = p.dim.unwrap_or(8);
    let cases = p.cases.unwrap_or(20);
    if n == 0 || cases == 0 {
        return Err(bad("need positive --dim and --cases"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let mut worst_imag = 0.0f64;
    let mut worst_mismatch = 0.0f64;
    let mut failed = 0;
    for _ in 0..cases {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (a[i][j] + a[j][i])).collect()).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let rep = real_spectrum_check(&h, &d)?;
        worst_imag = worst_imag.max(rep.max_imag_rel);
        worst_mismatch = worst_mismatch.max(rep.max_mismatch_rel);
        failed += usize::from(!rep.passed);
    }
    let verdict = if failed == 0 { Verdict::Pass } else { Verdict::Fail };
    let message = format!(
        "{}/{cases} cases real and matching; worst |Im|/radius {worst_imag:.2e}, worst mismatch {worst_mismatch:.2e}",
        cases - failed
    );
    let certificate = cert(
        "real-spectrum",
        verdict,
        None,
        json!({ "dim": n, "cases": cases, "seed": p.seed, "failed": failed,
                "max_imag_rel": worst_imag, "max_mismatch_rel": worst_mismatch }),
    )?;
    Ok(Outcome { verdict, worst_slack: None, message, certificate })
}
