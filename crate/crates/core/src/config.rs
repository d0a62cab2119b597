//! Scenario configuration: TOML with flat dotted keys (`channel.eta = 0.01`),
//! `key=value` overrides, validation with field paths, and a flat emitter
//! that round-trips.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use toml::{Table, Value};

use crate::analytics::{self, HoPolicy, Model, ModelOptions, PowerParams};
use crate::error::{Error, Result};
use crate::simulator::{FadingMode, Schedule, SimParams, Variant};
use crate::specfun::QuadratureSpec;
use crate::stochastic::{ChannelParams, DeploymentParams, MobilityParams};

/// RSRP threshold: a fixed value, or calibrated so that the pilot area holds
/// `run.pilot_candidates` BSs on average at `run.analysis_time`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Threshold::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(Threshold::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub mu: [f64; 2],
    pub eta: f64,
    pub alpha: f64,
    pub reception_radius: f64,
    pub noise_power: f64,
    pub antennas: u32,
    pub pilot_blocks: u32,
    pub rsrp_threshold: Threshold,
    pub retx_time: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let c = ChannelParams::default();
        Self {
            mu: c.mu,
            eta: c.eta,
            alpha: c.alpha,
            reception_radius: c.reception_radius,
            noise_power: c.noise_power,
            antennas: c.antennas,
            pilot_blocks: c.pilot_blocks,
            rsrp_threshold: Threshold::Auto,
            retx_time: c.retx_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Proposed,
    Baseline,
}

/// Fixed-interval comparison policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub t_hat: f64,
    pub power: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            t_hat: 0.3,
            power: 0.25,
        }
    }
}

/// Overrides applied for the long-term comparison experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub v: f64,
    pub eta: f64,
    pub mu_norm: f64,
    /// Time step of the emitted trajectories.
    pub sample_every: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            v: 3.0,
            eta: 0.5,
            mu_norm: 0.5f64.sqrt(),
            sample_every: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunControls {
    pub seed: u64,
    /// Number of seeds for multi-seed experiments (`seed`, `seed + 1`, ...).
    pub seeds: u32,
    pub horizon: f64,
    /// Time at which the closed forms are evaluated.
    pub analysis_time: f64,
    /// Target mean number of BSs in the pilot area for `rsrp_threshold = "auto"`.
    pub pilot_candidates: f64,
    /// Time grid of closed-form evaluation inside simulations.
    pub analysis_step: f64,
    pub schedule: ScheduleKind,
    pub fading: FadingMode,
    pub variant: Variant,
    pub output_dir: String,
}

impl Default for RunControls {
    fn default() -> Self {
        Self {
            seed: 1,
            seeds: 20,
            horizon: 50.0,
            analysis_time: 1.0,
            pilot_candidates: analytics::DEFAULT_PILOT_CANDIDATES,
            analysis_step: 0.25,
            schedule: ScheduleKind::Proposed,
            fading: FadingMode::TimeVarying,
            variant: Variant::MfWindow,
            output_dir: "out".into(),
        }
    }
}

/// Every parameter of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub channel: ChannelConfig,
    pub deployment: DeploymentParams,
    pub mobility: MobilityParams,
    pub power: PowerParams,
    pub policy: HoPolicy,
    pub quadrature: QuadratureSpec,
    pub model: ModelOptions,
    pub baseline: BaselineConfig,
    pub comparison: ComparisonConfig,
    pub run: RunControls,
}

/// Keys whose defaults are assumptions rather than part of the reference
/// parameter set; labelled in [`ScenarioParams::echo`].
pub const ASSUMED_DEFAULTS: &[&str] = &[
    "channel.pilot_blocks",
    "channel.retx_time",
    "channel.rsrp_threshold",
    "deployment.lambda_u",
    "deployment.window_side",
    "mobility.dt",
    "mobility.v",
    "policy.beta",
    "policy.t_hat",
    "run.analysis_time",
    "run.pilot_candidates",
];

impl ScenarioParams {
    /// Channel parameters with the RSRP threshold resolved.
    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        let mut ch = ChannelParams {
            mu: c.mu,
            eta: c.eta,
            alpha: c.alpha,
            reception_radius: c.reception_radius,
            noise_power: c.noise_power,
            antennas: c.antennas,
            pilot_blocks: c.pilot_blocks,
            rsrp_threshold: 1.0,
            retx_time: c.retx_time,
        };
        ch.rsrp_threshold = match c.rsrp_threshold {
            Threshold::Fixed(v) => v,
            Threshold::Auto => analytics::calibrated_rsrp_threshold(
                &ch,
                self.deployment.lambda_b,
                self.run.pilot_candidates,
                self.run.analysis_time,
            ),
        };
        ch
    }

    pub fn model(&self) -> Model {
        Model {
            channel: self.channel_params(),
            deploy: self.deployment,
            power: self.power,
            options: self.model,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::new(self.model(), self.mobility, self.policy);
        p.quadrature = self.quadrature;
        p.schedule = match self.run.schedule {
            ScheduleKind::Proposed => Schedule::Proposed,
            ScheduleKind::Baseline => Schedule::FixedInterval {
                t_hat: self.baseline.t_hat,
                power: self.baseline.power,
            },
        };
        p.variant = self.run.variant;
        p.fading = self.run.fading;
        p.analysis_step = self.run.analysis_step;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel.rsrp_threshold == Threshold::Auto {
            let target = self.run.pilot_candidates;
            if !(target > 0.0 && target.is_finite()) {
                return Err(Error::config(
                    "run.pilot_candidates",
                    format!("must be > 0, got {target}"),
                ));
            }
            if analytics::fading_stat(&self.channel_params(), self.run.analysis_time) == 0.0 {
                return Err(Error::config(
                    "channel.rsrp_threshold",
                    "cannot calibrate with zero mean fading power; set a number",
                ));
            }
        }
        self.channel_params().validate()?;
        self.deployment.validate()?;
        self.mobility.validate()?;
        self.power.validate()?;
        self.policy.validate()?;
        self.quadrature.validate()?;
        let m = &self.model;
        if !(m.fixed_point_tol > 0.0) {
            return Err(Error::config("model.fixed_point_tol", "must be > 0"));
        }
        if m.fixed_point_max_iter == 0 {
            return Err(Error::config("model.fixed_point_max_iter", "must be >= 1"));
        }
        let b = &self.baseline;
        if !(b.t_hat > 0.0) {
            return Err(Error::config("baseline.t_hat", format!("must be > 0, got {}", b.t_hat)));
        }
        if !(b.power > 0.0 && b.power <= self.power.p_max) {
            return Err(Error::config(
                "baseline.power",
                format!("must lie in (0, p_max], got {}", b.power),
            ));
        }
        let c = &self.comparison;
        if !(c.v > 0.0 && c.eta >= 0.0 && c.mu_norm >= 0.0) {
            return Err(Error::config("comparison", "v must be > 0, eta and mu_norm >= 0"));
        }
        if !(c.sample_every > 0.0) {
            return Err(Error::config("comparison.sample_every", "must be > 0"));
        }
        let r = &self.run;
        if r.seeds == 0 {
            return Err(Error::config("run.seeds", "must be >= 1"));
        }
        if !(r.horizon >= 0.0 && r.horizon.is_finite()) {
            return Err(Error::config(
                "run.horizon",
                format!("must be finite and >= 0, got {}", r.horizon),
            ));
        }
        if !(r.analysis_time > 0.0) {
            return Err(Error::config(
                "run.analysis_time",
                format!("must be > 0, got {}", r.analysis_time),
            ));
        }
        if !(r.analysis_step > 0.0) {
            return Err(Error::config(
                "run.analysis_step",
                format!("must be > 0, got {}", r.analysis_step),
            ));
        }
        Ok(())
    }

    /// Copy with `key=value` overrides applied and validated.
    pub fn apply_overrides(&self, overrides: &[String]) -> Result<ScenarioParams> {
        parse_config_str(&self.to_flat_toml(), overrides)
    }

    /// Flat `section.key = value` lines, sorted by key.
    pub fn to_flat_toml(&self) -> String {
        flat_lines(self)
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// As [`Self::to_flat_toml`], with assumed defaults labelled.
    pub fn echo(&self) -> String {
        let defaults = ScenarioParams::default();
        let default_lines: std::collections::BTreeMap<String, String> = flat_lines(&defaults).into_iter().collect();
        let mut out = String::new();
        for (k, v) in flat_lines(self) {
            out.push_str(&format!("{k} = {v}"));
            if ASSUMED_DEFAULTS.contains(&k.as_str()) && default_lines.get(&k) == Some(&v) {
                out.push_str("  # assumed default");
            }
            if k == "channel.rsrp_threshold" && v == "\"auto\"" {
                out.push_str(&format!("  (resolves to {:e})", self.channel_params().rsrp_threshold));
            }
            out.push('\n');
        }
        out
    }
}

fn flat_lines(p: &ScenarioParams) -> Vec<(String, String)> {
    let value = Value::try_from(p).expect("scenario serialises to TOML");
    let mut out = Vec::new();
    flatten("", &value, &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Table(t) => {
            for (k, sub) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, sub, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn known_keys() -> BTreeSet<String> {
    flat_lines(&ScenarioParams::default())
        .into_iter()
        .map(|(k, _)| k)
        .collect()
}

fn check_keys(prefix: &str, t: &Table, known: &BTreeSet<String>) -> Result<()> {
    for (k, v) in t {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(sub) if !known.contains(&key) => check_keys(&key, sub, known)?,
            _ if known.contains(&key) => {}
            _ => return Err(Error::config(key, "unknown key")),
        }
    }
    Ok(())
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::config(key, format!("`{p}` is not a section"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl fmt::Display for ScenarioParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_flat_toml())
    }
}

/// Parse configuration text plus `key=value` overrides over the defaults.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ScenarioParams> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<input>", e.message().to_string()))?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(o.clone(), "override must look like key=value"))?;
        set_path(&mut table, k.trim(), parse_literal(v))?;
    }
    check_keys("", &table, &known_keys())?;
    let mut params = ScenarioParams::default();
    // Section by section so that type errors name their section.
    let mut merged = Table::try_from(&params).expect("scenario serialises to TOML");
    for (section, v) in table {
        match (merged.get_mut(&section), v) {
            (Some(Value::Table(dst)), Value::Table(src)) => {
                for (k, val) in src {
                    dst.insert(k, val);
                }
                let sub = Value::Table(dst.clone());
                check_section(&section, sub)?;
            }
            (_, _) => return Err(Error::config(section, "expected a section of keys")),
        }
    }
    params = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("<input>", e.message().to_string()))?;
    params.validate()?;
    Ok(params)
}

fn check_section(section: &str, v: Value) -> Result<()> {
    let err = |e: toml::de::Error| Error::config(section, e.message().to_string());
    match section {
        "channel" => v.try_into::<ChannelConfig>().map(drop).map_err(err),
        "deployment" => v.try_into::<DeploymentParams>().map(drop).map_err(err),
        "mobility" => v.try_into::<MobilityParams>().map(drop).map_err(err),
        "power" => v.try_into::<PowerParams>().map(drop).map_err(err),
        "policy" => v.try_into::<HoPolicy>().map(drop).map_err(err),
        "quadrature" => v.try_into::<QuadratureSpec>().map(drop).map_err(err),
        "model" => v.try_into::<ModelOptions>().map(drop).map_err(err),
        "baseline" => v.try_into::<BaselineConfig>().map(drop).map_err(err),
        "comparison" => v.try_into::<ComparisonConfig>().map(drop).map_err(err),
        "run" => v.try_into::<RunControls>().map(drop).map_err(err),
        _ => Err(Error::config(section, "unknown section")),
    }
}

/// Read `path` (if any) and apply overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<ScenarioParams> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config(p.display().to_string(), format!("cannot read: {e}")))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}
