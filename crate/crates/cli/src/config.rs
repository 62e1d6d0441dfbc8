//! Flat `key=value` scenario files with dotted keys.
//!
//! A file is layered over the preset named by its `scenario_id`, then
//! `--set` overrides are applied, then the whole map is built into a typed
//! [`ScenarioConfig`]. Keys the chosen mode does not read are rejected.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use spikelab_core::objectives::{FnnTaskSpec, QuadraticSpec, Target};
use spikelab_core::optim::{
    AdafactorParams, AdamHyper, EpsilonBump, LrSchedule, MitigationPlan, OptimizerConfig, OptimizerKind,
};
use spikelab_core::spectral::{PowerOptions, ProbePlan};
use spikelab_core::spike::SegmentOptions;

use crate::error::{CliError, Result};

pub const KEYS: &[&str] = &[
    "scenario_id",
    "seed",
    "n_steps",
    "mode",
    "objective.kind",
    "objective.preset",
    "objective.eigenvalues",
    "objective.offset",
    "objective.theta0",
    "objective.target",
    "objective.input_dim",
    "objective.width",
    "objective.n_samples",
    "objective.noise_std",
    "objective.init_variance_scale",
    "objective.data_seed",
    "objective.dataset",
    "optimizer.kind",
    "optimizer.eta",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.epsilon",
    "optimizer.bias_correction",
    "schedule.kind",
    "schedule.alpha",
    "adafactor.eps1",
    "adafactor.eps2",
    "adafactor.clip_d",
    "mitigation.epsilon_bump_step",
    "mitigation.epsilon_bump_value",
    "mitigation.v_floor",
    "probe.every",
    "probe.hessian",
    "probe.preconditioned",
    "probe.grad",
    "probe.update",
    "probe.max_iters",
    "probe.tol",
    "probe.backend",
    "probe.warm_start",
    "analysis.rho",
    "analysis.window",
    "analysis.envelope_factor",
    "analysis.segment",
    "theorem.theta0",
    "theorem.eta",
    "theorem.beta2",
    "theorem.alpha",
    "theorem.max_steps",
    "sweep.param",
    "sweep.values",
];

/// Ordered key/value entries as read from text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax { line: i + 1, msg: format!("expected key=value, got '{line}'") });
            };
            let k = k.trim();
            if raw.entries.contains_key(k) {
                return Err(CliError::Syntax { line: i + 1, msg: format!("duplicate key '{k}'") });
            }
            raw.set(k, v.trim())?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(CliError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override '{kv}' is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    /// `other` on top of `self`.
    pub fn layered(&self, other: &RawConfig) -> RawConfig {
        let mut out = self.clone();
        out.entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn build(&self) -> Result<ScenarioConfig> {
        ScenarioConfig::from_raw(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    FiveStage,
    LrDecay,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Mode::Train),
            "five-stage" => Ok(Mode::FiveStage),
            "lr-decay" => Ok(Mode::LrDecay),
            _ => Err("expected train, five-stage or lr-decay".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    Quadratic { spec: QuadraticSpec, theta0: Vec<f64> },
    Fnn { spec: FnnTaskSpec, dataset: Option<PathBuf> },
}

/// When the ε bump fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpTiming {
    /// Fixed step, already folded into the optimizer's mitigation plan.
    Fixed,
    /// First spike onset of an unmitigated baseline run with the same seed.
    Onset { new_epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerConfig,
    pub bump: Option<BumpTiming>,
    pub probe: Option<ProbePlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisPlan {
    pub rho: f64,
    pub window: usize,
    pub envelope_factor: f64,
    pub segment: bool,
}

impl AnalysisPlan {
    pub fn segment_options(&self) -> SegmentOptions {
        SegmentOptions { decay_window: self.window, ..SegmentOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremSpec {
    pub theta0: f64,
    pub eta: f64,
    pub beta2: f64,
    /// Decay exponent; lr-decay only.
    pub alpha: Option<f64>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub seed: u64,
    pub n_steps: usize,
    pub mode: Mode,
    pub train: Option<TrainSpec>,
    pub theorem: Option<TheoremSpec>,
    pub analysis: AnalysisPlan,
    pub sweep: Option<SweepAxis>,
}

struct Reader<'a> {
    raw: &'a RawConfig,
    used: RefCell<BTreeSet<&'static str>>,
}

impl<'a> Reader<'a> {
    fn str(&self, key: &'static str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key);
        self.raw.get(key)
    }

    fn opt<T: FromStr>(&self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.str(key)
            .map(|s| s.parse::<T>().map_err(|e| CliError::value(key, format!("'{s}': {e}"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &'static str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, key: &'static str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| CliError::Missing(key.to_string()))
    }

    fn list(&self, key: &'static str) -> Result<Option<Vec<f64>>> {
        self.str(key).map(|s| parse_list(s).map_err(|m| CliError::value(key, m))).transpose()
    }

    /// Errors on any entry nobody read.
    fn finish(&self, mode: Mode) -> Result<()> {
        let used = self.used.borrow();
        match self.raw.entries.keys().find(|k| !used.contains(k.as_str())) {
            Some(k) => Err(CliError::value(k, format!("not used by a {mode:?} scenario with this objective"))),
            None => Ok(()),
        }
    }
}

/// Comma-separated numbers, or `logspace(a, b, n)` for `n` points from
/// `10^a` to `10^b`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some(args) = s.strip_prefix("logspace(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let [a, b, n] = parts[..] else {
            return Err("logspace takes (start_exp, end_exp, count)".into());
        };
        let a: f64 = a.parse().map_err(|e| format!("'{a}': {e}"))?;
        let b: f64 = b.parse().map_err(|e| format!("'{b}': {e}"))?;
        let n: usize = n.parse().map_err(|e| format!("'{n}': {e}"))?;
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![10f64.powf(a)],
            _ => (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect(),
        });
    }
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", x.trim())))
        .collect()
}

/// Sweep values stay textual so integer and keyword keys sweep too.
pub fn parse_values(s: &str) -> Vec<String> {
    if s.trim_start().starts_with("logspace(") {
        if let Ok(v) = parse_list(s) {
            return v.iter().map(|x| format!("{x:?}")).collect();
        }
    }
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

impl ScenarioConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let r = Reader { raw, used: RefCell::new(BTreeSet::new()) };
        let scenario_id: String = r.req("scenario_id")?;
        let seed: u64 = r.or("seed", 0)?;
        let mode: Mode = r.or("mode", Mode::Train)?;
        let analysis = AnalysisPlan {
            rho: r.or("analysis.rho", 3.0)?,
            window: r.or("analysis.window", 50)?,
            envelope_factor: r.or("analysis.envelope_factor", 10.0)?,
            segment: r.or("analysis.segment", false)?,
        };
        if !(analysis.rho > 1.0) || analysis.window == 0 || !(analysis.envelope_factor > 1.0) {
            return Err(CliError::value("analysis", "need rho > 1, window >= 1 and envelope_factor > 1"));
        }
        let sweep = match (r.str("sweep.param"), r.str("sweep.values")) {
            (None, None) => None,
            (Some(p), v) => Some(SweepAxis { param: p.to_string(), values: v.map(parse_values).unwrap_or_default() }),
            (None, Some(_)) => return Err(CliError::Missing("sweep.param".into())),
        };

        let (train, theorem, n_steps) = match mode {
            Mode::Train => {
                let n_steps: usize = r.req("n_steps")?;
                (Some(train_spec(&r, seed)?), None, n_steps)
            }
            Mode::FiveStage | Mode::LrDecay => {
                let th = TheoremSpec {
                    theta0: r.req("theorem.theta0")?,
                    eta: r.req("theorem.eta")?,
                    beta2: r.req("theorem.beta2")?,
                    alpha: if mode == Mode::LrDecay { Some(r.req("theorem.alpha")?) } else { None },
                    max_steps: r.opt("theorem.max_steps")?,
                };
                if !(th.eta > 0.0) || !(th.beta2 > 0.0 && th.beta2 < 1.0) || !th.theta0.is_finite() {
                    return Err(CliError::value("theorem", "need eta > 0 and beta2 in (0, 1)"));
                }
                // 0 lets the theorem pick the trace length.
                let n_steps = r.or("n_steps", 0)?;
                (None, Some(th), n_steps)
            }
        };
        r.finish(mode)?;
        if mode == Mode::Train && n_steps == 0 {
            return Err(CliError::value("n_steps", "must be >= 1"));
        }
        Ok(ScenarioConfig { scenario_id, seed, n_steps, mode, train, theorem, analysis, sweep })
    }
}

fn train_spec(r: &Reader<'_>, seed: u64) -> Result<TrainSpec> {
    let kind: String = r.or("objective.kind", "quadratic".to_string())?;
    let objective = match kind.as_str() {
        "quadratic" => {
            let mut spec = match r.str("objective.preset") {
                None | Some("half-square") => QuadraticSpec::isotropic(1, 1.0),
                Some("gd-delay-100d") => QuadraticSpec::gd_delay_100d(),
                Some(p) => return Err(CliError::value("objective.preset", format!("unknown quadratic preset '{p}'"))),
            };
            if let Some(e) = r.list("objective.eigenvalues")? {
                spec.eigenvalues = e;
            }
            let n = spec.eigenvalues.len();
            if let Some(o) = r.list("objective.offset")? {
                spec.offset = broadcast(o, n, "objective.offset")?;
            }
            let theta0 = broadcast(r.list("objective.theta0")?.unwrap_or(vec![1.0]), n, "objective.theta0")?;
            ObjectiveSpec::Quadratic { spec, theta0 }
        }
        "fnn" => {
            let data_seed = r.or("objective.data_seed", seed)?;
            let mut spec = match r.str("objective.preset") {
                None | Some("sine") => FnnTaskSpec::sine(20, 200, data_seed),
                Some("teacher-50d") => FnnTaskSpec::teacher_50d(data_seed),
                Some(p) => return Err(CliError::value("objective.preset", format!("unknown fnn preset '{p}'"))),
            };
            spec.target = r.or::<Target>("objective.target", spec.target)?;
            spec.input_dim = r.or("objective.input_dim", spec.input_dim)?;
            spec.width = r.or("objective.width", spec.width)?;
            spec.n_samples = r.or("objective.n_samples", spec.n_samples)?;
            spec.noise_std = r.or("objective.noise_std", spec.noise_std)?;
            spec.init_variance_scale = r.or("objective.init_variance_scale", spec.init_variance_scale)?;
            spec.validate()?;
            ObjectiveSpec::Fnn { spec, dataset: r.opt("objective.dataset")? }
        }
        other => return Err(CliError::value("objective.kind", format!("expected quadratic or fnn, got '{other}'"))),
    };

    let okind: OptimizerKind = r.or("optimizer.kind", OptimizerKind::Adam)?;
    let d = AdamHyper::default();
    let hyper = AdamHyper {
        eta: r.req("optimizer.eta")?,
        beta1: r.or("optimizer.beta1", if okind == OptimizerKind::Gd { 0.0 } else { d.beta1 })?,
        beta2: r.or("optimizer.beta2", d.beta2)?,
        epsilon: r.or("optimizer.epsilon", d.epsilon)?,
        bias_correction: r.or("optimizer.bias_correction", d.bias_correction)?,
    };
    let mut opt = OptimizerConfig::new(okind, hyper);
    opt.schedule = match r.or("schedule.kind", "constant".to_string())?.as_str() {
        "constant" => LrSchedule::Constant,
        "power-decay" => LrSchedule::PowerDecay { alpha: r.req("schedule.alpha")? },
        other => return Err(CliError::value("schedule.kind", format!("expected constant or power-decay, got '{other}'"))),
    };
    if okind == OptimizerKind::Adafactor {
        let a = AdafactorParams::default();
        opt.adafactor = AdafactorParams {
            eps1: r.or("adafactor.eps1", a.eps1)?,
            eps2: r.or("adafactor.eps2", a.eps2)?,
            clip_d: r.or("adafactor.clip_d", a.clip_d)?,
        };
    }

    let mut bump = None;
    let mut mitigation = MitigationPlan { epsilon_bump: None, v_floor: r.opt("mitigation.v_floor")? };
    match r.str("mitigation.epsilon_bump_step") {
        None | Some("none") => {}
        Some(s) => {
            let value: f64 = r.req("mitigation.epsilon_bump_value")?;
            if s == "onset" {
                bump = Some(BumpTiming::Onset { new_epsilon: value });
            } else {
                let at_step = s
                    .parse()
                    .map_err(|e| CliError::value("mitigation.epsilon_bump_step", format!("'{s}': {e}")))?;
                mitigation.epsilon_bump = Some(EpsilonBump { at_step, new_epsilon: value });
                bump = Some(BumpTiming::Fixed);
            }
        }
    }
    opt.mitigation = mitigation;
    opt.validate()?;
    if matches!(bump, Some(BumpTiming::Onset { new_epsilon }) if !(new_epsilon >= 0.0 && new_epsilon.is_finite())) {
        return Err(CliError::value("mitigation.epsilon_bump_value", "must be >= 0"));
    }

    let dim = match &objective {
        ObjectiveSpec::Quadratic { spec, .. } => spec.eigenvalues.len(),
        ObjectiveSpec::Fnn { spec, .. } => (spec.input_dim + 2) * spec.width + 1,
    };
    // Wide networks pay an HVP per power iteration, so probe less often.
    let every = r.or("probe.every", if dim > 10_000 { 5 } else { 1 })?;
    let probe = if every == 0 {
        None
    } else {
        let p = ProbePlan::every(every);
        let power = PowerOptions {
            max_iters: r.or("probe.max_iters", p.power.max_iters)?,
            tol: r.or("probe.tol", p.power.tol)?,
        };
        let backend_fd = match r.or("probe.backend", "exact".to_string())?.as_str() {
            "exact" => false,
            "fd" => true,
            other => return Err(CliError::value("probe.backend", format!("expected exact or fd, got '{other}'"))),
        };
        Some(ProbePlan {
            every,
            hessian: r.or("probe.hessian", p.hessian)?,
            preconditioned: r.or("probe.preconditioned", p.preconditioned)?,
            grad: r.or("probe.grad", p.grad)?,
            update: r.or("probe.update", p.update)?,
            power,
            backend_fd,
            warm_start: r.or("probe.warm_start", p.warm_start)?,
        })
    };
    Ok(TrainSpec { objective, optimizer: opt, bump, probe })
}

fn broadcast(v: Vec<f64>, n: usize, key: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        m if m == n => Ok(v),
        m => Err(CliError::value(key, format!("expected 1 or {n} values, got {m}"))),
    }
}
