//! Named presets. Each one is a config file shipped under `configs/`.

use crate::config::RawConfig;
use crate::error::{CliError, Result};

const PRESETS: &[(&str, &str)] = &[
    ("custom", include_str!("../configs/custom.cfg")),
    ("fig2a", include_str!("../configs/fig2a.cfg")),
    ("fig2bc-sweep", include_str!("../configs/fig2bc-sweep.cfg")),
    ("fig3-spike", include_str!("../configs/fig3-spike.cfg")),
    ("fig3-oscillation", include_str!("../configs/fig3-oscillation.cfg")),
    ("fig5-gd", include_str!("../configs/fig5-gd.cfg")),
    ("fig5-adam", include_str!("../configs/fig5-adam.cfg")),
    ("fig6-fnn50d", include_str!("../configs/fig6-fnn50d.cfg")),
    ("figD8-mitigations", include_str!("../configs/figD8-mitigations.cfg")),
    ("figD9-adagrad", include_str!("../configs/figD9-adagrad.cfg")),
    ("figD10-rmsprop", include_str!("../configs/figD10-rmsprop.cfg")),
    ("figD11-adafactor", include_str!("../configs/figD11-adafactor.cfg")),
    ("figD12-gd-delay", include_str!("../configs/figD12-gd-delay.cfg")),
    ("thmD4", include_str!("../configs/thmD4.cfg")),
    ("thmD6", include_str!("../configs/thmD6.cfg")),
];

pub fn ids() -> Vec<&'static str> {
    PRESETS.iter().map(|(id, _)| *id).collect()
}

pub fn preset_text(id: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(k, _)| *k == id).map(|(_, t)| *t)
}

pub fn preset(id: &str) -> Result<RawConfig> {
    let text = preset_text(id).ok_or_else(|| CliError::UnknownScenario(id.to_string()))?;
    RawConfig::parse(text)
}

/// Preset named by `scenario`, or by the file's `scenario_id`, with the
/// file's entries and then each `KEY=VALUE` override layered on top.
pub fn resolve(scenario: Option<&str>, file: Option<&RawConfig>, overrides: &[String]) -> Result<RawConfig> {
    let id = match (scenario, file.and_then(|f| f.get("scenario_id"))) {
        (Some(s), Some(f)) if s != f => {
            return Err(CliError::Usage(format!("--scenario {s} disagrees with scenario_id={f} in the config file")));
        }
        (Some(s), _) | (None, Some(s)) => s.to_string(),
        (None, None) => return Err(CliError::Usage("give --scenario or a config file with scenario_id".into())),
    };
    let mut raw = preset(&id)?;
    if let Some(f) = file {
        raw = raw.layered(f);
    }
    for kv in overrides {
        raw.apply_override(kv)?;
    }
    if raw.get("scenario_id") != Some(id.as_str()) {
        return Err(CliError::Usage("scenario_id cannot be overridden".into()));
    }
    Ok(raw)
}
