//! One child run per axis value, up to `jobs` at a time.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::analysis::{summarize, SpikeSummary, SCHEMA_VERSION};
use crate::config::{AnalysisPlan, RawConfig, KEYS};
use crate::error::{CliError, Result};
use crate::exec::execute;
use crate::output::{fresh_dir, write_json, write_run};
use crate::trace::TraceTable;

pub const SUMMARY_COLUMNS: &[&str] = &[
    "param",
    "value",
    "status",
    "run_dir",
    "onset_step",
    "pre_spike_step",
    "vhat_at_spike",
    "eta_eff_at_spike",
    "max_lambda_grad",
    "n_spikes",
    "error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    /// `completed`, `diverged` or `error`.
    pub status: String,
    /// Child directory name inside the sweep directory.
    pub run_dir: Option<String>,
    pub summary: Option<SpikeSummary>,
    pub error: Option<String>,
}

pub fn check_axis(param: &str, values: &[String]) -> Result<()> {
    if !KEYS.contains(&param) {
        return Err(CliError::UnknownKey(param.to_string()));
    }
    if param == "scenario_id" || param.starts_with("sweep.") {
        return Err(CliError::value(param, "cannot be swept"));
    }
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    Ok(())
}

fn dir_name(i: usize, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{i:02}-{clean}")
}

/// Summary of a child run, read back from its `trace.csv`.
pub fn summarize_dir(dir: &Path, plan: &AnalysisPlan) -> Result<SpikeSummary> {
    let p = dir.join("trace.csv");
    let f = File::open(&p).map_err(|e| CliError::io(&p, e))?;
    summarize(&TraceTable::read(BufReader::new(f))?, plan)
}

fn run_child(base: &RawConfig, param: &str, i: usize, value: &str, sweep_dir: &Path) -> SweepRow {
    let mut row = SweepRow { value: value.to_string(), status: "error".into(), run_dir: None, summary: None, error: None };
    let attempt = || -> Result<(String, String, SpikeSummary)> {
        let mut raw = base.clone();
        raw.set(param, value)?;
        let cfg = raw.build()?;
        let ex = execute(&cfg)?;
        let name = dir_name(i, value);
        let dir = fresh_dir(sweep_dir, &name)?;
        write_run(&dir, &raw, &cfg, &ex)?;
        let summary = summarize_dir(&dir, &cfg.analysis)?;
        Ok((ex.analysis.status.clone(), name, summary))
    };
    match attempt() {
        Ok((status, name, s)) => {
            row.status = status;
            row.run_dir = Some(name);
            row.summary = Some(s);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

#[derive(Serialize)]
struct SweepEcho<'a> {
    schema_version: u32,
    param: &'a str,
    values: &'a [String],
    base: &'a std::collections::BTreeMap<String, String>,
}

/// Runs every value and writes `sweep_summary.csv` into `sweep_dir`.
/// Child failures become rows; only I/O on the summary itself is an error.
pub fn run_sweep(base: &RawConfig, param: &str, values: &[String], jobs: usize, sweep_dir: &Path) -> Result<Vec<SweepRow>> {
    check_axis(param, values)?;
    write_json(
        &sweep_dir.join("sweep.json"),
        &SweepEcho { schema_version: SCHEMA_VERSION, param, values, base: &base.entries },
    )?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; values.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(v) = values.get(i) else { break };
                let row = run_child(base, param, i, v, sweep_dir);
                slots.lock().expect("no panics while holding the lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = slots.into_inner().expect("workers joined").into_iter().flatten().collect();
    write_summary(&sweep_dir.join("sweep_summary.csv"), param, &rows)?;
    Ok(rows)
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|x| x.to_string()).unwrap_or_default()
}

fn optf(x: Option<f64>) -> String {
    x.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn summary_record(param: &str, row: &SweepRow) -> Vec<String> {
    let s = row.summary.as_ref();
    vec![
        param.to_string(),
        row.value.clone(),
        row.status.clone(),
        opt(row.run_dir.as_ref()),
        opt(s.and_then(|s| s.onset_step)),
        opt(s.and_then(|s| s.pre_spike_step)),
        optf(s.and_then(|s| s.vhat_at_spike)),
        optf(s.and_then(|s| s.eta_eff_at_spike)),
        optf(s.and_then(|s| s.max_lambda_grad)),
        opt(s.map(|s| s.n_spikes)),
        opt(row.error.as_ref()),
    ]
}

pub fn write_summary(path: &PathBuf, param: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record(summary_record(param, r))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}
