//! Plain-text `key = value` configuration shared by the simulator and the
//! guardian.
//!
//! ```text
//! # market
//! base_demand = 800
//! trust_mode = eq3
//!
//! # rules
//! margin_basis = on_price
//! max_price = 150
//! ```
//!
//! Blank lines and `#` comments are ignored. Guardian keys that collide with
//! simulator keys (`unit_cost`) set both. Keys may be prefixed with `sim.` or
//! `guardian.` to target one side only.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::ConfigError;
use crate::guardian::ConstraintSet;
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarketConfig {
    pub sim: SimConfig,
    pub constraints: ConstraintSet,
}

impl MarketConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError::Parse {
            line: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply every `key = value` line of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        apply_lines(text, |k, v| self.set(k, v))?;
        self.validate()
    }

    /// Apply a single `KEY=VALUE` override, as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = split_assignment(assignment)?;
        self.set(key, value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.constraints.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (scope, key) = match key.split_once('.') {
            Some(("sim", k)) => (Scope::Sim, k),
            Some(("guardian", k)) => (Scope::Guardian, k),
            _ => (Scope::Both, key),
        };
        let mut matched = false;
        if scope != Scope::Guardian {
            matched |= set_sim(&mut self.sim, key, value)?;
        }
        if scope != Scope::Sim {
            matched |= set_guardian(&mut self.constraints, key, value)?;
        }
        if matched {
            Ok(())
        } else {
            Err(ConfigError::UnknownKey(key.to_string()))
        }
    }

    /// Render every field as `key = value` lines; [`MarketConfig::parse`]
    /// reads the output back unchanged.
    pub fn to_text(&self) -> String {
        let s = &self.sim;
        let c = &self.constraints;
        let mut out = String::from("# simulator\n");
        let sim_fields: [(&str, String); 25] = [
            ("base_demand", s.base_demand.to_string()),
            ("price_elasticity", s.price_elasticity.to_string()),
            ("ad_log_scale", s.ad_log_scale.to_string()),
            ("ad_sat_scale", s.ad_sat_scale.to_string()),
            ("seasonality_amp", s.seasonality_amp.to_string()),
            ("season_period", s.season_period.to_string()),
            ("trust_ad_gain", s.trust_ad_gain.to_string()),
            ("trust_decay", s.trust_decay.to_string()),
            ("trust_eta", s.trust_eta.to_string()),
            ("trust_reward", s.trust_reward.to_string()),
            ("trust_penalty", s.trust_penalty.to_string()),
            ("trust_ad_cap", s.trust_ad_cap.to_string()),
            ("trust_min", s.trust_min.to_string()),
            ("trust_max", s.trust_max.to_string()),
            ("sim.unit_cost", s.unit_cost.to_string()),
            ("fixed_cost", s.fixed_cost.to_string()),
            ("reference_price", s.reference_price.to_string()),
            ("reference_trust", s.reference_trust.to_string()),
            ("trust_exponent", s.trust_exponent.to_string()),
            ("trust_mode", s.trust_mode.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("seed", s.seed.to_string()),
            ("initial_price", s.initial_price.to_string()),
            ("initial_trust", s.initial_trust.to_string()),
            ("initial_ad", s.initial_ad.to_string()),
        ];
        for (k, v) in sim_fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n# guardian\n");
        let guardian_fields: [(&str, String); 10] = [
            ("guardian.unit_cost", c.unit_cost.to_string()),
            ("cost_buffer", c.cost_buffer.to_string()),
            ("min_margin", c.min_margin.to_string()),
            ("margin_basis", c.margin_basis.to_string()),
            ("safety_buffer", c.safety_buffer.to_string()),
            ("max_price", c.max_price.to_string()),
            ("ad_cap", c.ad_cap.to_string()),
            ("ad_increase_cap", c.ad_increase_cap.to_string()),
            ("max_discount_pct", c.max_discount_pct.to_string()),
            ("max_increase_pct", c.max_increase_pct.to_string()),
        ];
        for (k, v) in guardian_fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Feed every `key = value` line of `text` to `set`, tagging errors with
/// the line number.
pub fn apply_lines(
    text: &str,
    mut set: impl FnMut(&str, &str) -> Result<(), ConfigError>,
) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        set(key.trim(), value.trim()).map_err(|e| match e {
            ConfigError::UnknownKey(_) | ConfigError::BadValue { .. } => ConfigError::Parse {
                line: i + 1,
                message: e.to_string(),
            },
            other => other,
        })?;
    }
    Ok(())
}

/// Split `KEY=VALUE`, trimming both halves.
pub fn split_assignment(assignment: &str) -> Result<(&str, &str), ConfigError> {
    assignment
        .split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| ConfigError::Parse {
            line: 0,
            message: format!("expected KEY=VALUE, got `{assignment}`"),
        })
}

/// Set one field of a serde-backed struct by name.
///
/// `value` is read as JSON when it parses (numbers, booleans) and as a
/// string otherwise.
pub fn set_serde_field<T: Serialize + DeserializeOwned>(
    target: &mut T,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let bad = |message: String| ConfigError::BadValue {
        key: key.to_string(),
        message,
    };
    let mut obj = serde_json::to_value(&*target).map_err(|e| bad(e.to_string()))?;
    let slot = obj
        .get_mut(key)
        .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    *target = serde_json::from_value(obj).map_err(|e| bad(e.to_string()))?;
    Ok(())
}

/// `key = value` lines for every field of a serde-backed struct.
pub fn serde_fields_text<T: Serialize>(prefix: &str, target: &T) -> String {
    let mut out = String::new();
    if let Ok(Value::Object(map)) = serde_json::to_value(target) {
        for (k, v) in map {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            let _ = writeln!(out, "{prefix}{k} = {v}");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    Sim,
    Guardian,
    Both,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn set_sim(s: &mut SimConfig, key: &str, v: &str) -> Result<bool, ConfigError> {
    match key {
        "base_demand" => s.base_demand = parse(key, v)?,
        "price_elasticity" => s.price_elasticity = parse(key, v)?,
        "ad_log_scale" => s.ad_log_scale = parse(key, v)?,
        "ad_sat_scale" => s.ad_sat_scale = parse(key, v)?,
        "seasonality_amp" => s.seasonality_amp = parse(key, v)?,
        "season_period" => s.season_period = parse(key, v)?,
        "trust_ad_gain" => s.trust_ad_gain = parse(key, v)?,
        "trust_decay" => s.trust_decay = parse(key, v)?,
        "trust_eta" => s.trust_eta = parse(key, v)?,
        "trust_reward" => s.trust_reward = parse(key, v)?,
        "trust_penalty" => s.trust_penalty = parse(key, v)?,
        "trust_ad_cap" => s.trust_ad_cap = parse(key, v)?,
        "trust_min" => s.trust_min = parse(key, v)?,
        "trust_max" => s.trust_max = parse(key, v)?,
        "trust_bounds" => {
            let (lo, hi) = v
                .trim_matches(|c| c == '[' || c == ']')
                .split_once(',')
                .ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    message: "expected `[min, max]`".into(),
                })?;
            s.trust_min = parse(key, lo.trim())?;
            s.trust_max = parse(key, hi.trim())?;
        }
        "unit_cost" => s.unit_cost = parse(key, v)?,
        "fixed_cost" => s.fixed_cost = parse(key, v)?,
        "reference_price" => s.reference_price = parse(key, v)?,
        "reference_trust" => s.reference_trust = parse(key, v)?,
        "trust_exponent" => s.trust_exponent = parse(key, v)?,
        "trust_mode" => s.trust_mode = parse(key, v)?,
        "noise_sigma" => s.noise_sigma = parse(key, v)?,
        "seed" => s.seed = parse(key, v)?,
        "initial_price" => s.initial_price = parse(key, v)?,
        "initial_trust" => s.initial_trust = parse(key, v)?,
        "initial_ad" => s.initial_ad = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_guardian(c: &mut ConstraintSet, key: &str, v: &str) -> Result<bool, ConfigError> {
    match key {
        "unit_cost" => c.unit_cost = parse(key, v)?,
        "cost_buffer" => c.cost_buffer = parse(key, v)?,
        "min_margin" => c.min_margin = parse(key, v)?,
        "margin_basis" => c.margin_basis = parse(key, v)?,
        "safety_buffer" => c.safety_buffer = parse(key, v)?,
        "max_price" => c.max_price = parse(key, v)?,
        "ad_cap" => c.ad_cap = parse(key, v)?,
        "ad_increase_cap" => c.ad_increase_cap = parse(key, v)?,
        "max_discount_pct" => c.max_discount_pct = parse(key, v)?,
        "max_increase_pct" => c.max_increase_pct = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}
