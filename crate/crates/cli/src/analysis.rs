//! `analysis.json` and the per-run spike summary, both computed from the
//! trace table alone.

use serde::Serialize;

use spikelab_core::spike::{detect_spikes, envelope_rise, EnvelopeRise, SpikeEvent, StageSegmentation};

use crate::config::AnalysisPlan;
use crate::error::Result;
use crate::trace::TraceTable;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub n_records: usize,
    pub final_loss: Option<f64>,
    pub max_loss: Option<f64>,
    pub max_lambda_max_hhat: Option<f64>,
    pub max_lambda_grad_hhat: Option<f64>,
    /// First probed step with `λ_max(Ĥ) > 2/η_t`.
    pub first_lambda_max_above: Option<usize>,
    pub first_lambda_grad_above: Option<usize>,
    pub first_sustained_above: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub schema_version: u32,
    pub scenario_id: String,
    pub status: String,
    pub plan: AnalysisPlan,
    pub spikes: Vec<SpikeEvent>,
    pub envelope: Option<EnvelopeRise>,
    pub segmentation: Option<StageSegmentation>,
    /// Step at which a scheduled ε bump took effect.
    pub epsilon_bump_step: Option<usize>,
    pub stats: Stats,
}

/// Headline numbers of one run, as written to `sweep_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSummary {
    pub onset_step: Option<usize>,
    pub pre_spike_step: Option<usize>,
    pub vhat_at_spike: Option<f64>,
    pub eta_eff_at_spike: Option<f64>,
    pub max_lambda_grad: Option<f64>,
    pub n_spikes: usize,
}

fn max_of(it: impl Iterator<Item = f64>) -> Option<f64> {
    it.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
}

fn first_above(t: &TraceTable, f: impl Fn(&crate::trace::TraceRow) -> Option<f64>) -> Option<usize> {
    t.rows.iter().find(|r| f(r).is_some_and(|x| x > 2.0 / r.eta_t)).map(|r| r.step)
}

pub fn spikes(table: &TraceTable, plan: &AnalysisPlan) -> Result<Vec<SpikeEvent>> {
    Ok(detect_spikes(&table.losses(), plan.rho, plan.window)?)
}

impl Analysis {
    pub fn from_table(
        scenario_id: &str,
        status: &str,
        table: &TraceTable,
        plan: &AnalysisPlan,
        segmentation: Option<StageSegmentation>,
    ) -> Result<Self> {
        let losses = table.losses();
        let rows = &table.rows;
        let stats = Stats {
            n_records: rows.len(),
            final_loss: losses.last().copied(),
            max_loss: max_of(losses.iter().copied()),
            max_lambda_max_hhat: max_of(rows.iter().filter_map(|r| r.lambda_max_hhat)),
            max_lambda_grad_hhat: max_of(rows.iter().filter_map(|r| r.lambda_grad_hhat)),
            first_lambda_max_above: first_above(table, |r| r.lambda_max_hhat),
            first_lambda_grad_above: first_above(table, |r| r.lambda_grad_hhat),
            first_sustained_above: first_above(table, |r| r.lambda_grad_sustained),
        };
        Ok(Analysis {
            schema_version: SCHEMA_VERSION,
            scenario_id: scenario_id.to_string(),
            status: status.to_string(),
            plan: *plan,
            spikes: spikes(table, plan)?,
            envelope: envelope_rise(&losses, plan.window, plan.envelope_factor),
            segmentation,
            epsilon_bump_step: None,
            stats,
        })
    }
}

/// Spike onset from the median detector; the pre-spike step, where `√v̂`
/// and `η/√v̂` are read, from the loss envelope.
pub fn summarize(table: &TraceTable, plan: &AnalysisPlan) -> Result<SpikeSummary> {
    let ev = spikes(table, plan)?;
    let env = envelope_rise(&table.losses(), plan.window, plan.envelope_factor);
    let at = env.and_then(|e| table.rows.get(e.pre_spike_step));
    Ok(SpikeSummary {
        onset_step: ev.first().map(|e| e.onset_step),
        pre_spike_step: env.map(|e| e.pre_spike_step),
        vhat_at_spike: at.and_then(|r| r.vhat_norm_total),
        eta_eff_at_spike: at.and_then(|r| r.eta_eff),
        max_lambda_grad: max_of(table.rows.iter().filter_map(|r| r.lambda_grad_hhat)),
        n_spikes: ev.len(),
    })
}
