//! `trace.csv`: one row per optimizer step, fixed column order.
//!
//! Unsampled cells are empty. Floats are written in shortest round-trip
//! form so a trace read back reproduces the in-memory values exactly.

use std::io::{Read, Write};

use spikelab_core::optim::RunTrace;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub vhat_norm_total: Option<f64>,
    pub vhat_norm_blocks: Vec<Option<f64>>,
    pub eta_t: f64,
    pub eta_eff: Option<f64>,
    pub lambda_max_h: Option<f64>,
    pub lambda_max_hhat: Option<f64>,
    pub lambda_grad_hhat: Option<f64>,
    pub lambda_update_hhat: Option<f64>,
    pub lambda_grad_sustained: Option<f64>,
    pub stage: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceTable {
    pub block_names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

pub fn header(block_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["step", "loss", "grad_norm", "vhat_norm_total"].map(String::from).to_vec();
    h.extend(block_names.iter().map(|b| format!("vhat_norm_block_{b}")));
    h.extend(
        [
            "eta_t",
            "eta_eff",
            "lambda_max_H",
            "lambda_max_Hhat",
            "lambda_grad_Hhat",
            "lambda_update_Hhat",
            "lambda_grad_sustained",
            "stage",
        ]
        .map(String::from),
    );
    h
}

fn cell(x: Option<f64>) -> String {
    x.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl TraceTable {
    pub fn from_run(trace: &RunTrace) -> Self {
        let has_v = trace.config.kind.has_second_moment();
        let rows = trace
            .records
            .iter()
            .map(|r| {
                let p = r.probe.as_ref();
                TraceRow {
                    step: r.step,
                    loss: r.loss,
                    grad_norm: r.grad_norm,
                    vhat_norm_total: r.vhat_norm_total,
                    vhat_norm_blocks: if has_v {
                        r.vhat_norm_blocks.iter().map(|x| Some(*x)).collect()
                    } else {
                        vec![None; trace.block_names.len()]
                    },
                    eta_t: r.eta_t,
                    eta_eff: r.eta_eff,
                    lambda_max_h: p.and_then(|p| p.lambda_max_h),
                    lambda_max_hhat: p.and_then(|p| p.lambda_max_hhat),
                    lambda_grad_hhat: p.and_then(|p| p.lambda_grad_hhat),
                    lambda_update_hhat: p.and_then(|p| p.lambda_update_hhat),
                    lambda_grad_sustained: r.lambda_grad_sustained,
                    stage: r.stage,
                }
            })
            .collect();
        TraceTable { block_names: trace.block_names.clone(), rows }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header(&self.block_names))?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), format!("{:?}", r.loss), format!("{:?}", r.grad_norm), cell(r.vhat_norm_total)];
            rec.extend(r.vhat_norm_blocks.iter().map(|x| cell(*x)));
            rec.extend([
                format!("{:?}", r.eta_t),
                cell(r.eta_eff),
                cell(r.lambda_max_h),
                cell(r.lambda_max_hhat),
                cell(r.lambda_grad_hhat),
                cell(r.lambda_update_hhat),
                cell(r.lambda_grad_sustained),
                r.stage.map(|s| s.to_string()).unwrap_or_default(),
            ]);
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| CliError::io("trace.csv", e))?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let head: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let block_names: Vec<String> = head
            .iter()
            .filter_map(|h| h.strip_prefix("vhat_norm_block_").map(String::from))
            .collect();
        if head != header(&block_names) {
            return Err(CliError::value("trace.csv", format!("unexpected header {head:?}")));
        }
        let nb = block_names.len();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |c: usize| CliError::value("trace.csv", format!("row {} column {}: '{}'", i + 1, head[c], &rec[c]));
            let opt = |c: usize| -> Result<Option<f64>> {
                if rec[c].is_empty() {
                    Ok(None)
                } else {
                    rec[c].parse().map(Some).map_err(|_| bad(c))
                }
            };
            let req = |c: usize| opt(c)?.ok_or_else(|| bad(c));
            let b = 4 + nb;
            rows.push(TraceRow {
                step: rec[0].parse().map_err(|_| bad(0))?,
                loss: req(1)?,
                grad_norm: req(2)?,
                vhat_norm_total: opt(3)?,
                vhat_norm_blocks: (4..b).map(opt).collect::<Result<_>>()?,
                eta_t: req(b)?,
                eta_eff: opt(b + 1)?,
                lambda_max_h: opt(b + 2)?,
                lambda_max_hhat: opt(b + 3)?,
                lambda_grad_hhat: opt(b + 4)?,
                lambda_update_hhat: opt(b + 5)?,
                lambda_grad_sustained: opt(b + 6)?,
                stage: if rec[b + 7].is_empty() { None } else { Some(rec[b + 7].parse().map_err(|_| bad(b + 7))?) },
            });
        }
        Ok(TraceTable { block_names, rows })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}
