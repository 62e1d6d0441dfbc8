//! Run directories: `<out>/<scenario_id>/<timestamp>-seed<seed>/`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::SCHEMA_VERSION;
use crate::config::{RawConfig, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::exec::Executed;

pub const OUT_ENV: &str = "SPIKELAB_OUT";

/// `--out`, else `$SPIKELAB_OUT`, else `./runs`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates a fresh directory `<parent>/<stem>`, adding `-2`, `-3`, … when
/// the name is taken.
pub fn fresh_dir(parent: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    for k in 1.. {
        let name = if k == 1 { stem.to_string() } else { format!("{stem}-{k}") };
        let p = parent.join(name);
        match fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(p, e)),
        }
    }
    unreachable!()
}

pub fn timestamped(root: &Path, scenario_id: &str, seed: u64, suffix: &str) -> Result<PathBuf> {
    let ts = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    fresh_dir(&root.join(scenario_id), &format!("{ts}-seed{seed}{suffix}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| CliError::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    schema_version: u32,
    config: &'a ScenarioConfig,
    entries: &'a std::collections::BTreeMap<String, String>,
}

/// Writes `config.json`, `trace.csv`, `analysis.json` and, when present,
/// `certificate.json` into `dir`.
pub fn write_run(dir: &Path, raw: &RawConfig, cfg: &ScenarioConfig, ex: &Executed) -> Result<()> {
    write_json(&dir.join("config.json"), &ConfigEcho { schema_version: SCHEMA_VERSION, config: cfg, entries: &raw.entries })?;
    let p = dir.join("trace.csv");
    let f = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
    ex.table.write(BufWriter::new(f))?;
    write_json(&dir.join("analysis.json"), &ex.analysis)?;
    if let Some(c) = &ex.certificate {
        write_json(&dir.join("certificate.json"), c)?;
    }
    Ok(())
}
