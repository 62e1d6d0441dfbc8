//! Command-line front end for spikelab-core: scenario presets, runs,
//! sweeps, theorem verification and dataset export.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod exec;
pub mod output;
pub mod scenarios;
pub mod sweep;
pub mod trace;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use spikelab_core::objectives::FnnTask;
use spikelab_core::optim::RunStatus;

use crate::config::{parse_values, ObjectiveSpec, RawConfig};
use crate::error::{CliError, Result};
use crate::exec::{execute, Verdict};
use crate::verify::{Theorem, VerifyParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY_FAIL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spikelab", version, about = "Loss-spike experiments for adaptive optimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one scenario and write its run directory.
    Run(RunArgs),
    /// Run a scenario once per value of one config key.
    Sweep(SweepArgs),
    /// Check one theorem numerically and write certificate.json.
    Verify(VerifyArgs),
    /// Write the dataset of an FNN scenario as CSV.
    ExportDataset(ExportArgs),
    /// List presets, or print one.
    Scenarios {
        /// Print this preset's config text.
        id: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Config file; its scenario_id picks the preset it is layered on.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name, when no config file is given.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Override one key, e.g. --set optimizer.beta2=0.999. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output root; defaults to $SPIKELAB_OUT, then ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Key to sweep; defaults to the config's sweep.param.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated values or logspace(a, b, n); defaults to sweep.values.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub theorem: Theorem,
    #[command(flatten)]
    pub params: VerifyParams,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub output: PathBuf,
}

fn load_raw(a: &ScenarioArgs) -> Result<RawConfig> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Some(RawConfig::parse(&text)?)
        }
        None => None,
    };
    scenarios::resolve(a.scenario.as_deref(), file.as_ref(), &a.set)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |x| format!("{x:.3e}"))
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let raw = load_raw(&a.scenario)?;
    let cfg = raw.build()?;
    let ex = execute(&cfg)?;
    let root = output::out_root(a.out.as_deref());
    let dir = output::timestamped(&root, &cfg.scenario_id, cfg.seed, "")?;
    output::write_run(&dir, &raw, &cfg, &ex)?;
    let verdict = ex
        .certificate
        .as_ref()
        .and_then(|c| c.get("verdict"))
        .and_then(|v| v.as_str())
        .map(|v| format!(", certificate {v}"))
        .unwrap_or_default();
    println!(
        "{} seed {}: {} after {} steps, final loss {}, {} spikes{verdict} -> {}",
        cfg.scenario_id,
        cfg.seed,
        ex.analysis.status,
        ex.table.rows.len(),
        fmt_opt(ex.analysis.stats.final_loss),
        ex.analysis.spikes.len(),
        dir.display()
    );
    Ok(match ex.status {
        RunStatus::Completed => EXIT_OK,
        RunStatus::Diverged => EXIT_DIVERGED,
    })
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let raw = load_raw(&a.scenario)?;
    let base_cfg = raw.build()?;
    let axis = base_cfg.sweep.clone();
    let param = a
        .param
        .clone()
        .or_else(|| axis.as_ref().map(|s| s.param.clone()))
        .ok_or_else(|| CliError::Usage("no --param and no sweep.param in the config".into()))?;
    let values = match &a.values {
        Some(v) => parse_values(v),
        None => axis.map(|s| s.values).unwrap_or_default(),
    };
    sweep::check_axis(&param, &values)?;
    let root = output::out_root(a.out.as_deref());
    let dir = output::timestamped(&root, &base_cfg.scenario_id, base_cfg.seed, "-sweep")?;
    let rows = sweep::run_sweep(&raw, &param, &values, a.jobs, &dir)?;
    for r in &rows {
        let s = r.summary.as_ref();
        println!(
            "{param}={:<24} {:<9} onset {:>6} sqrt(vhat) {:>10} eta/sqrt(vhat) {:>10}{}",
            r.value,
            r.status,
            s.and_then(|s| s.onset_step).map_or("-".into(), |o| o.to_string()),
            fmt_opt(s.and_then(|s| s.vhat_at_spike)),
            fmt_opt(s.and_then(|s| s.eta_eff_at_spike)),
            r.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
        );
    }
    let failed = rows.iter().filter(|r| r.status == "error").count();
    println!("{} runs, {failed} failed -> {}", rows.len(), dir.join("sweep_summary.csv").display());
    Ok(EXIT_OK)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let out = verify::verify(a.theorem, &a.params)?;
    let root = output::out_root(a.out.as_deref());
    let dir = output::timestamped(&root, &format!("verify-{}", a.theorem.name()), a.params.seed, "")?;
    output::write_json(&dir.join("certificate.json"), &out.certificate)?;
    let slack = out.worst_slack.map_or("n/a".into(), |s| format!("{s:.3e}"));
    println!("{} {}: worst slack {slack}; {} -> {}", out.verdict, a.theorem.name(), out.message, dir.display());
    Ok(match out.verdict {
        Verdict::Pass | Verdict::Skipped => EXIT_OK,
        Verdict::Fail => EXIT_VERIFY_FAIL,
    })
}

pub fn cmd_export(a: &ExportArgs) -> Result<i32> {
    let cfg = load_raw(&a.scenario)?.build()?;
    let Some(ObjectiveSpec::Fnn { spec, dataset }) = cfg.train.as_ref().map(|t| &t.objective) else {
        return Err(CliError::Usage(format!("scenario {} has no FNN dataset", cfg.scenario_id)));
    };
    let net = match dataset {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::io(p, e))?;
            FnnTask::with_dataset(spec.clone(), spikelab_core::objectives::Dataset::read_csv(f)?)?
        }
        None => FnnTask::new(spec.clone())?,
    };
    write_dataset(&net, &a.output)?;
    println!("{} rows -> {}", net.dataset().len(), a.output.display());
    Ok(EXIT_OK)
}

fn write_dataset(net: &FnnTask, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    net.dataset().write_csv(std::io::BufWriter::new(f))?;
    Ok(())
}

pub fn cmd_scenarios(id: Option<&str>) -> Result<i32> {
    match id {
        Some(id) => print!("{}", scenarios::preset_text(id).ok_or_else(|| CliError::UnknownScenario(id.into()))?),
        None => scenarios::ids().iter().for_each(|id| println!("{id}")),
    }
    Ok(EXIT_OK)
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::ExportDataset(a) => cmd_export(a),
        Command::Scenarios { id } => cmd_scenarios(id.as_deref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
