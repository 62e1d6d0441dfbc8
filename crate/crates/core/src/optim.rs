//! First-order optimizers and the instrumented training loop.
//!
//! Each optimizer is split into a moment update ([`accumulate`]) and an
//! update computation ([`update_delta`]) so that probes can observe the
//! freshly updated second moment before the parameters move.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::grad::Objective;
use crate::params::{norm, rms, ParamVector};
use crate::spectral::{self, Preconditioner, ProbePlan, ProbeRecord, ProbeState};

/// Any |θᵢ| above this halts the run as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    HeavyBall,
    Adam,
    Rmsprop,
    Adagrad,
    Adafactor,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::HeavyBall => "heavy-ball",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adafactor => "adafactor",
        }
    }

    /// Whether the optimizer keeps a second-moment buffer.
    pub fn has_second_moment(self) -> bool {
        !matches!(self, OptimizerKind::Gd | OptimizerKind::HeavyBall)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gd" => OptimizerKind::Gd,
            "heavy-ball" => OptimizerKind::HeavyBall,
            "adam" => OptimizerKind::Adam,
            "rmsprop" => OptimizerKind::Rmsprop,
            "adagrad" => OptimizerKind::Adagrad,
            "adafactor" => OptimizerKind::Adafactor,
            other => return Err(Error::InvalidParameter(format!("unknown optimizer '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    /// Base learning rate; the schedule scales it per step.
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bias_correction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `η_t = η₀ (t+1)^(−alpha)`.
    PowerDecay { alpha: f64 },
}

impl LrSchedule {
    pub fn eta_at(&self, eta0: f64, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant => eta0,
            LrSchedule::PowerDecay { alpha } => eta0 * ((t + 1) as f64).powf(-alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdafactorParams {
    pub eps1: f64,
    pub eps2: f64,
    /// Update clipping threshold `d`.
    pub clip_d: f64,
}

impl Default for AdafactorParams {
    fn default() -> Self {
        Self {
            eps1: 1e-30,
            eps2: 1e-3,
            clip_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBump {
    pub at_step: usize,
    pub new_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MitigationPlan {
    pub epsilon_bump: Option<EpsilonBump>,
    /// Elementwise lower clip applied to the raw second moment every step.
    pub v_floor: Option<f64>,
}

impl MitigationPlan {
    pub fn active(&self) -> bool {
        self.epsilon_bump.is_some() || self.v_floor.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub hyper: AdamHyper,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adafactor: AdafactorParams,
    #[serde(default)]
    pub mitigation: MitigationPlan,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, hyper: AdamHyper) -> Self {
        Self {
            kind,
            hyper,
            schedule: LrSchedule::Constant,
            adafactor: AdafactorParams::default(),
            mitigation: MitigationPlan::default(),
        }
    }

    pub fn gd(eta: f64) -> Self {
        Self::new(OptimizerKind::Gd, AdamHyper { eta, beta1: 0.0, ..AdamHyper::default() })
    }

    pub fn adam(eta: f64, beta1: f64, beta2: f64) -> Self {
        Self::new(OptimizerKind::Adam, AdamHyper { eta, beta1, beta2, ..AdamHyper::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(h.eta > 0.0) || !h.eta.is_finite() {
            return bad(format!("eta must be > 0, got {}", h.eta));
        }
        if !(0.0..1.0).contains(&h.beta1) {
            return bad(format!("beta1 must lie in [0, 1), got {}", h.beta1));
        }
        if self.kind.has_second_moment() && self.kind != OptimizerKind::Adagrad && !(0.0..1.0).contains(&h.beta2) {
            return bad(format!("beta2 must lie in [0, 1), got {}", h.beta2));
        }
        if !(h.epsilon >= 0.0) || !h.epsilon.is_finite() {
            return bad(format!("epsilon must be >= 0, got {}", h.epsilon));
        }
        if let LrSchedule::PowerDecay { alpha } = self.schedule {
            if !(alpha > 0.0 && alpha < 1.0) {
                return bad(format!("decay alpha must lie in (0, 1), got {alpha}"));
            }
        }
        let a = &self.adafactor;
        if !(a.eps1 >= 0.0 && a.eps2 >= 0.0 && a.clip_d > 0.0) {
            return bad("adafactor eps1, eps2 must be >= 0 and clip_d > 0".into());
        }
        if let Some(b) = self.mitigation.epsilon_bump {
            if !(b.new_epsilon >= 0.0) || !b.new_epsilon.is_finite() {
                return bad(format!("bumped epsilon must be >= 0, got {}", b.new_epsilon));
            }
        }
        if let Some(f) = self.mitigation.v_floor {
            if !(f >= 0.0) || !f.is_finite() {
                return bad(format!("v_floor must be >= 0, got {f}"));
            }
        }
        Ok(())
    }

    pub fn eta_at(&self, step: usize) -> f64 {
        self.schedule.eta_at(self.hyper.eta, step)
    }

    /// ε in force at `step`, after any scheduled bump.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        match self.mitigation.epsilon_bump {
            Some(b) if step >= b.at_step => b.new_epsilon,
            _ => self.hyper.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Number of completed moment updates.
    pub t: usize,
    pub m: ParamVector,
    pub v: ParamVector,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, like: &ParamVector) -> Self {
        Self {
            kind,
            t: 0,
            m: ParamVector::zeros_like(like),
            v: ParamVector::zeros_like(like),
        }
    }

    /// Second moment as the optimizer divides by it: bias-corrected for
    /// Adam when enabled, raw otherwise.
    pub fn v_hat(&self, cfg: &OptimizerConfig) -> Vec<f64> {
        if self.kind == OptimizerKind::Adam && cfg.hyper.bias_correction && self.t > 0 {
            let c = 1.0 - cfg.hyper.beta2.powi(self.t as i32);
            self.v.values.iter().map(|v| v / c).collect()
        } else {
            self.v.values.clone()
        }
    }

    pub fn m_hat(&self, cfg: &OptimizerConfig) -> Vec<f64> {
        if self.kind == OptimizerKind::Adam && cfg.hyper.bias_correction && self.t > 0 {
            let c = 1.0 - cfg.hyper.beta1.powi(self.t as i32);
            self.m.values.iter().map(|m| m / c).collect()
        } else {
            self.m.values.clone()
        }
    }
}

/// Moment update for one step with gradient `g`.
pub fn accumulate(state: &mut OptimizerState, g: &[f64], cfg: &OptimizerConfig) {
    let h = &cfg.hyper;
    match state.kind {
        OptimizerKind::Gd => {}
        OptimizerKind::HeavyBall => {
            for (m, g) in state.m.values.iter_mut().zip(g) {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            }
        }
        OptimizerKind::Adam => {
            for (m, g) in state.m.values.iter_mut().zip(g) {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            }
            for (v, g) in state.v.values.iter_mut().zip(g) {
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            }
        }
        OptimizerKind::Rmsprop | OptimizerKind::Adafactor => {
            for (v, g) in state.v.values.iter_mut().zip(g) {
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            }
        }
        OptimizerKind::Adagrad => {
            for (v, g) in state.v.values.iter_mut().zip(g) {
                *v += g * g;
            }
        }
    }
    if let (Some(floor), true) = (cfg.mitigation.v_floor, state.kind.has_second_moment()) {
        for v in &mut state.v.values {
            *v = v.max(floor);
        }
    }
    state.t += 1;
}

/// The Adafactor normalized direction `û = u / max(1, RMS(u)/d)` and its clip factor.
pub fn adafactor_direction(v: &[f64], g: &[f64], p: &AdafactorParams) -> (Vec<f64>, f64) {
    let u: Vec<f64> = g.iter().zip(v).map(|(g, v)| g / (v.sqrt() + p.eps1)).collect();
    let clip = (rms(&u) / p.clip_d).max(1.0);
    (u.iter().map(|u| u / clip).collect(), clip)
}

/// Parameter change `θ_t − θ_{t+1}` after [`accumulate`] has run for `step`.
pub fn update_delta(state: &OptimizerState, theta: &[f64], g: &[f64], cfg: &OptimizerConfig, step: usize) -> Vec<f64> {
    let eta = cfg.eta_at(step);
    let eps = cfg.epsilon_at(step);
    match state.kind {
        OptimizerKind::Gd => g.iter().map(|g| eta * g).collect(),
        OptimizerKind::HeavyBall => state.m.values.iter().map(|m| eta * m).collect(),
        OptimizerKind::Adam => {
            let mh = state.m_hat(cfg);
            let vh = state.v_hat(cfg);
            mh.iter().zip(&vh).map(|(m, v)| eta * m / (v.sqrt() + eps)).collect()
        }
        OptimizerKind::Rmsprop | OptimizerKind::Adagrad => g
            .iter()
            .zip(&state.v.values)
            .map(|(g, v)| eta * g / (v.sqrt() + eps))
            .collect(),
        OptimizerKind::Adafactor => {
            let (uh, _) = adafactor_direction(&state.v.values, g, &cfg.adafactor);
            let rho = cfg.adafactor.eps2.max(rms(theta));
            uh.iter().map(|u| eta * rho * u).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Loss after the update, `L(θ_{step+1})`.
    pub loss: f64,
    /// `‖∇L(θ_step)‖`.
    pub grad_norm: f64,
    /// `‖√v̂‖` over all coordinates, absent for optimizers without a second moment.
    pub vhat_norm_total: Option<f64>,
    pub vhat_norm_blocks: Vec<f64>,
    pub eta_t: f64,
    /// `η_t √n / ‖√v̂‖`; reduces to `η/√v̂` in one dimension.
    pub eta_eff: Option<f64>,
    pub probe: Option<ProbeRecord>,
    pub lambda_grad_sustained: Option<f64>,
    pub stage: Option<u8>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: OptimizerConfig,
    pub seed: u64,
    pub n_steps: usize,
    pub status: RunStatus,
    pub block_names: Vec<String>,
    /// `L(θ₀)`.
    pub initial_loss: f64,
    pub records: Vec<StepRecord>,
    pub final_theta: Vec<f64>,
}

impl RunTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Loss before each step: `L(θ_k)` for record k.
    pub fn losses_before(&self) -> Vec<f64> {
        std::iter::once(self.initial_loss)
            .chain(self.records.iter().map(|r| r.loss))
            .take(self.records.len())
            .collect()
    }

    pub fn probes(&self) -> impl Iterator<Item = &ProbeRecord> {
        self.records.iter().filter_map(|r| r.probe.as_ref())
    }
}

/// One optimizer step from `theta`, with no probing.
pub fn step(
    obj: &dyn Objective,
    theta: &ParamVector,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector, StepRecord)> {
    ensure_dim(obj.dim(), theta.len())?;
    if state.kind != cfg.kind {
        return Err(Error::InvalidParameter(format!(
            "state is for {} but config is {}",
            state.kind, cfg.kind
        )));
    }
    let k = state.t;
    let (_, g) = obj.value_and_gradient(&theta.values)?;
    accumulate(state, &g, cfg);
    let delta = update_delta(state, &theta.values, &g, cfg, k);
    let next: Vec<f64> = theta.values.iter().zip(&delta).map(|(t, d)| t - d).collect();
    let loss = obj.loss(&next).unwrap_or(f64::INFINITY);
    let mut rec = base_record(k, loss, &g, state, cfg, &theta.blocks);
    rec.diverged = is_diverged(&next) || !loss.is_finite();
    Ok((theta.like(next), rec))
}

fn is_diverged(theta: &[f64]) -> bool {
    theta.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_BOUND)
}

fn base_record(
    k: usize,
    loss: f64,
    g: &[f64],
    state: &OptimizerState,
    cfg: &OptimizerConfig,
    blocks: &[crate::params::Block],
) -> StepRecord {
    let eta = cfg.eta_at(k);
    let (total, per_block, eff) = if state.kind.has_second_moment() {
        let vh = state.v_hat(cfg);
        let total = vh.iter().sum::<f64>().sqrt();
        let per: Vec<f64> = blocks
            .iter()
            .map(|b| vh[b.range()].iter().sum::<f64>().sqrt())
            .collect();
        let eff = eta * (vh.len() as f64).sqrt() / total;
        (Some(total), per, Some(eff))
    } else {
        (None, Vec::new(), None)
    };
    StepRecord {
        step: k,
        loss,
        grad_norm: norm(g),
        vhat_norm_total: total,
        vhat_norm_blocks: per_block,
        eta_t: eta,
        eta_eff: eff,
        probe: None,
        lambda_grad_sustained: None,
        stage: None,
        diverged: false,
    }
}

/// Runs `n_steps` steps from `theta0`, probing on the plan's cadence.
///
/// Divergence is not an error: the run stops and the trace is marked.
pub fn run(
    obj: &dyn Objective,
    theta0: &ParamVector,
    cfg: &OptimizerConfig,
    n_steps: usize,
    probes: Option<&ProbePlan>,
    seed: u64,
) -> Result<RunTrace> {
    cfg.validate()?;
    ensure_dim(obj.dim(), theta0.len())?;
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
    }
    let mut theta = theta0.values.clone();
    let mut state = OptimizerState::new(cfg.kind, theta0);
    let (l0, mut g) = obj.value_and_gradient(&theta)?;
    let mut probe_state = ProbeState::default();
    let mut records = Vec::with_capacity(n_steps);
    let mut status = RunStatus::Completed;

    for k in 0..n_steps {
        accumulate(&mut state, &g, cfg);
        let delta = update_delta(&state, &theta, &g, cfg, k);

        let probe = match probes {
            Some(plan) if plan.due(k) => {
                let pre = Preconditioner::for_optimizer(cfg, &state, &theta, &g, k)?;
                let eta = cfg.eta_at(k);
                let u: Vec<f64> = delta.iter().map(|d| d / eta).collect();
                Some(spectral::probe(plan, obj, &theta, &g, &u, &pre, eta, k, seed, &mut probe_state)?)
            }
            _ => None,
        };

        let next: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - d).collect();
        let diverged = is_diverged(&next);
        let eval = if diverged { None } else { obj.value_and_gradient(&next).ok() };
        let loss = eval.as_ref().map_or(f64::INFINITY, |(l, _)| *l);
        let mut rec = base_record(k, loss, &g, &state, cfg, &theta0.blocks);
        rec.probe = probe;
        theta = next;
        match eval {
            Some((_, g_next)) if g_next.iter().all(|x| x.is_finite()) => {
                records.push(rec);
                g = g_next;
            }
            _ => {
                rec.diverged = true;
                records.push(rec);
                status = RunStatus::Diverged;
                break;
            }
        }
    }

    spectral::fill_sustained(&mut records);
    Ok(RunTrace {
        config: cfg.clone(),
        seed,
        n_steps,
        status,
        block_names: theta0.blocks.iter().map(|b| b.name.clone()).collect(),
        initial_loss: l0,
        records,
        final_theta: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Quadratic;

    fn scalar(theta: f64) -> ParamVector {
        ParamVector::from_values(vec![theta])
    }

    #[test]
    fn adam_first_step_by_hand() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let cfg = OptimizerConfig::adam(0.1, 0.9, 0.99);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &scalar(1.0));
        let (th, _) = step(&q, &scalar(1.0), &mut st, &cfg).unwrap();
        assert!((st.m.values[0] - 0.1).abs() < 1e-15);
        assert!((st.v.values[0] - 0.01).abs() < 1e-15);
        assert!((th.values[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let cfg = OptimizerConfig::adam(0.1, 0.9, 0.99);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &scalar(0.0));
        let (th, _) = step(&q, &scalar(0.0), &mut st, &cfg).unwrap();
        assert_eq!(th.values[0], 0.0);
    }

    #[test]
    fn gd_contracts_or_expands() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        for (eta, factor) in [(1.9, 0.9), (2.1, 1.1)] {
            let cfg = OptimizerConfig::gd(eta);
            let mut st = OptimizerState::new(OptimizerKind::Gd, &scalar(1.0));
            let mut th = scalar(1.0);
            for _ in 0..5 {
                let prev = th.values[0].abs();
                th = step(&q, &th, &mut st, &cfg).unwrap().0;
                assert!((th.values[0].abs() / prev - factor).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_trace() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let tr = run(&q, &scalar(1.0), &OptimizerConfig::gd(0.5), 1, None, 0).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.records[0].loss, 0.125);
        assert_eq!(tr.initial_loss, 0.5);
        assert_eq!(tr.status, RunStatus::Completed);
    }

    #[test]
    fn divergence_halts_the_run() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let tr = run(&q, &scalar(1.0), &OptimizerConfig::gd(3.0), 10_000, None, 0).unwrap();
        assert_eq!(tr.status, RunStatus::Diverged);
        assert!(tr.records.last().unwrap().diverged);
        assert!(tr.records.len() < 10_000);
        assert!(tr.records[..tr.records.len() - 1].iter().all(|r| !r.diverged));
    }

    #[test]
    fn sign_descent_without_bias_correction() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let mut cfg = OptimizerConfig::adam(0.3, 0.0, 0.0);
        cfg.hyper.bias_correction = false;
        cfg.hyper.epsilon = 0.5;
        for theta in [2.0, -0.7, 1e-3] {
            let mut st = OptimizerState::new(OptimizerKind::Adam, &scalar(theta));
            let (th, _) = step(&q, &scalar(theta), &mut st, &cfg).unwrap();
            let g: f64 = theta;
            let want = theta - 0.3 * g / (g.abs() + 0.5);
            assert!((th.values[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn v_floor_and_epsilon_bump() {
        let q = Quadratic::new(vec![1.0]).unwrap();
        let mut cfg = OptimizerConfig::adam(0.1, 0.9, 0.99);
        cfg.mitigation.v_floor = Some(0.01);
        cfg.mitigation.epsilon_bump = Some(EpsilonBump { at_step: 3, new_epsilon: 0.1 });
        assert_eq!(cfg.epsilon_at(2), 1e-8);
        assert_eq!(cfg.epsilon_at(3), 0.1);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &scalar(1e-4));
        let mut th = scalar(1e-4);
        for _ in 0..20 {
            th = step(&q, &th, &mut st, &cfg).unwrap().0;
            assert!(st.v.values[0] >= 0.01);
        }
    }

    #[test]
    fn power_decay_schedule() {
        let s = LrSchedule::PowerDecay { alpha: 0.5 };
        assert_eq!(s.eta_at(0.1, 0), 0.1);
        assert!((s.eta_at(0.1, 3) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_hyper() {
        let mut cfg = OptimizerConfig::adam(0.1, 0.9, 1.5);
        assert!(cfg.validate().is_err());
        cfg.hyper.beta2 = 0.99;
        assert!(cfg.validate().is_ok());
        cfg.hyper.eta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            OptimizerKind::Gd,
            OptimizerKind::HeavyBall,
            OptimizerKind::Adam,
            OptimizerKind::Rmsprop,
            OptimizerKind::Adagrad,
            OptimizerKind::Adafactor,
        ] {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
    }
}
