//! Turns a [`ScenarioConfig`] into a trace, an analysis and, in theorem
//! modes, a certificate. Nothing here touches the filesystem except reading
//! an external dataset.

use std::fs::File;

use serde::Serialize;

use spikelab_core::grad::Objective;
use spikelab_core::objectives::{Dataset, FnnTask, Quadratic};
use spikelab_core::optim::{run, EpsilonBump, RunStatus};
use spikelab_core::params::ParamVector;
use spikelab_core::spectral::sustained_predictor;
use spikelab_core::spike::{detect_spikes, label_stages, segment_series, segment_stages};
use spikelab_core::theory::{five_stage_certificate, lagged_trajectory, lr_decay_witness, DecayWitness, FiveStageCertificate};

use crate::analysis::{Analysis, SCHEMA_VERSION};
use crate::config::{BumpTiming, Mode, ObjectiveSpec, ScenarioConfig, TheoremSpec, TrainSpec};
use crate::error::{CliError, Result};
use crate::trace::{TraceRow, TraceTable};

pub const LR_DECAY_DEFAULT_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "SKIPPED(hypothesis)")]
    Skipped,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skipped => "SKIPPED(hypothesis)",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate<T: Serialize> {
    pub schema_version: u32,
    pub theorem: &'static str,
    pub verdict: Verdict,
    pub worst_slack: Option<f64>,
    pub detail: T,
}

impl<T: Serialize> Certificate<T> {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

pub struct Executed {
    pub table: TraceTable,
    pub analysis: Analysis,
    pub certificate: Option<serde_json::Value>,
    pub status: RunStatus,
}

pub fn build_objective(spec: &ObjectiveSpec) -> Result<(Box<dyn Objective>, ParamVector)> {
    Ok(match spec {
        ObjectiveSpec::Quadratic { spec, theta0 } => {
            (Box::new(Quadratic::from_spec(spec)?), ParamVector::from_values(theta0.clone()))
        }
        ObjectiveSpec::Fnn { spec, dataset } => {
            let net = match dataset {
                Some(p) => {
                    let f = File::open(p).map_err(|e| CliError::io(p, e))?;
                    FnnTask::with_dataset(spec.clone(), Dataset::read_csv(f)?)?
                }
                None => FnnTask::new(spec.clone())?,
            };
            let th = net.init_params();
            (Box::new(net), th)
        }
    })
}

pub fn execute(cfg: &ScenarioConfig) -> Result<Executed> {
    match (cfg.mode, &cfg.train, &cfg.theorem) {
        (Mode::Train, Some(t), _) => execute_train(cfg, t),
        (Mode::FiveStage, _, Some(th)) => execute_five_stage(cfg, th),
        (Mode::LrDecay, _, Some(th)) => execute_lr_decay(cfg, th),
        _ => unreachable!("config builder pairs mode with its spec"),
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Diverged => "diverged",
    }
}

fn execute_train(cfg: &ScenarioConfig, spec: &TrainSpec) -> Result<Executed> {
    let (obj, theta0) = build_objective(&spec.objective)?;
    let mut opt = spec.optimizer.clone();
    if let Some(BumpTiming::Onset { new_epsilon }) = spec.bump {
        let base = run(obj.as_ref(), &theta0, &opt, cfg.n_steps, None, cfg.seed)?;
        let ev = detect_spikes(&base.losses(), cfg.analysis.rho, cfg.analysis.window)?;
        // No spike in the baseline leaves nothing to mitigate.
        if let Some(e) = ev.first() {
            opt.mitigation.epsilon_bump = Some(EpsilonBump { at_step: e.onset_step, new_epsilon });
        }
    }
    let mut tr = run(obj.as_ref(), &theta0, &opt, cfg.n_steps, spec.probe.as_ref(), cfg.seed)?;
    let seg = if cfg.analysis.segment {
        let s = segment_stages(&tr, &cfg.analysis.segment_options());
        label_stages(&mut tr, &s);
        Some(s)
    } else {
        None
    };
    let table = TraceTable::from_run(&tr);
    let mut analysis = Analysis::from_table(&cfg.scenario_id, status_name(tr.status), &table, &cfg.analysis, seg)?;
    analysis.epsilon_bump_step = opt.mitigation.epsilon_bump.map(|b| b.at_step);
    Ok(Executed { table, analysis, certificate: None, status: tr.status })
}

/// Rows for the scalar lagged recursion on `½θ²`, where `H = 1` and
/// `Ĥ = 1/√v_t`.
fn lagged_rows(traj: &[(f64, f64)], eta_at: impl Fn(usize) -> f64, stage: impl Fn(usize) -> Option<u8>) -> Vec<TraceRow> {
    let n = traj.len().saturating_sub(1);
    let lam: Vec<f64> = traj[..n].iter().map(|&(_, lv)| (-0.5 * lv).exp()).collect();
    (0..n)
        .map(|t| {
            let (lt, lv) = traj[t];
            let vh = (0.5 * lv).exp();
            let eta = eta_at(t);
            TraceRow {
                step: t,
                loss: 0.5 * (2.0 * traj[t + 1].0).exp(),
                grad_norm: lt.exp(),
                vhat_norm_total: Some(vh),
                vhat_norm_blocks: vec![Some(vh)],
                eta_t: eta,
                eta_eff: Some(eta / vh),
                lambda_max_h: Some(1.0),
                lambda_max_hhat: Some(lam[t]),
                lambda_grad_hhat: Some(lam[t]),
                lambda_update_hhat: Some(lam[t]),
                lambda_grad_sustained: sustained_predictor(&lam, t).ok(),
                stage: stage(t),
            }
        })
        .collect()
}

/// Stage of step `t` by the certificate's own boundaries; steps from `t5`
/// on start the next cycle.
pub fn certificate_stage(c: &FiveStageCertificate, t: usize) -> u8 {
    if matches!(c.boundaries[5], Some(t5) if t >= t5) {
        return 1;
    }
    1 + c.boundaries[1..5].iter().filter(|b| matches!(b, Some(x) if *x <= t)).count() as u8
}

pub fn five_stage_verdict(c: &FiveStageCertificate) -> (Verdict, Option<f64>) {
    let worst = c.checks.iter().map(|k| k.worst_slack).reduce(f64::min);
    let v = if !c.hypothesis_ok {
        Verdict::Skipped
    } else if c.passed() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    (v, worst)
}

pub fn five_stage_certificate_json(c: &FiveStageCertificate) -> Result<serde_json::Value> {
    let (verdict, worst_slack) = five_stage_verdict(c);
    Certificate { schema_version: SCHEMA_VERSION, theorem: "five-stage", verdict, worst_slack, detail: c }.to_json()
}

fn execute_five_stage(cfg: &ScenarioConfig, th: &TheoremSpec) -> Result<Executed> {
    let max_steps = th.max_steps.or((cfg.n_steps > 0).then_some(cfg.n_steps));
    let cert = five_stage_certificate(th.theta0, th.eta, th.beta2, max_steps)?;
    let seg = segment_series(&cert.stage_inputs(), &cfg.analysis.segment_options());
    let rows = lagged_rows(&cert.trajectory, |_| th.eta, |t| Some(certificate_stage(&cert, t)));
    let table = TraceTable { block_names: vec!["theta".into()], rows };
    let analysis = Analysis::from_table(&cfg.scenario_id, "completed", &table, &cfg.analysis, Some(seg))?;
    let certificate = Some(five_stage_certificate_json(&cert)?);
    Ok(Executed { table, analysis, certificate, status: RunStatus::Completed })
}

pub fn lr_decay_verdict(w: &DecayWitness) -> Verdict {
    if w.witness_step.is_some() {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

pub fn lr_decay_certificate_json(w: &DecayWitness) -> Result<serde_json::Value> {
    // Slack of the witness: how far |1 − η_t/√v_t| exceeds 1.
    let slack = w.multiplier_at_witness.map(|m| m.abs() - 1.0);
    Certificate { schema_version: SCHEMA_VERSION, theorem: "lr-decay", verdict: lr_decay_verdict(w), worst_slack: slack, detail: w }
        .to_json()
}

fn execute_lr_decay(cfg: &ScenarioConfig, th: &TheoremSpec) -> Result<Executed> {
    let alpha = th.alpha.expect("lr-decay config carries alpha");
    let budget = th.max_steps.unwrap_or(LR_DECAY_DEFAULT_BUDGET);
    let w = lr_decay_witness(th.theta0, th.eta, alpha, th.beta2, budget)?;
    let eta_at = |t: usize| th.eta * ((t + 1) as f64).powf(-alpha);
    // Without an explicit length the trace runs just past the witness.
    let n = match (cfg.n_steps, w.witness_step) {
        (0, Some(t)) => t + 1000,
        (0, None) => budget,
        (n, _) => n,
    };
    let traj = lagged_trajectory(th.theta0, th.beta2, n, eta_at);
    let rows = lagged_rows(&traj, eta_at, |_| None);
    let table = TraceTable { block_names: vec!["theta".into()], rows };
    let analysis = Analysis::from_table(&cfg.scenario_id, "completed", &table, &cfg.analysis, None)?;
    let certificate = Some(lr_decay_certificate_json(&w)?);
    Ok(Executed { table, analysis, certificate, status: RunStatus::Completed })
}
