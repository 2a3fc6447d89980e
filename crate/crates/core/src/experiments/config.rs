use std::path::PathBuf;

use toml::{Table, Value};

use super::{Method, SweepSpec, SweepVariable};
use crate::channel::SystemConfig;
use crate::error::{Error, Result};

/// Everything a config file can set. Scenario keys go to `system`, the rest
/// describe the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub realizations: usize,
    pub methods: Vec<Method>,
    pub sample_fraction: f64,
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            variable: SweepVariable::NElements,
            values: vec![16.0, 32.0, 64.0],
            realizations: 100,
            methods: vec![Method::RcgJo, Method::RandomPhaseMrt, Method::NoRis],
            sample_fraction: 0.3,
            jobs: 1,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            variable: self.variable,
            values: self.values.clone(),
            realizations: self.realizations,
            methods: self.methods.clone(),
            base: self.system.clone(),
            sample_fraction: self.sample_fraction,
            jobs: self.jobs,
        }
    }

    /// Flat `key = value` text, as written by [`parse_config`].
    pub fn to_text(&self) -> String {
        let sys = toml::to_string(&self.system).unwrap_or_default();
        let values: Vec<String> = self.values.iter().map(|v| format!("{v:?}")).collect();
        let methods: Vec<String> = self.methods.iter().map(|m| format!("\"{m}\"")).collect();
        let mut s = sys;
        s.push_str(&format!("variable = \"{}\"\n", self.variable));
        s.push_str(&format!("values = [{}]\n", values.join(", ")));
        s.push_str(&format!("realizations = {}\n", self.realizations));
        s.push_str(&format!("methods = [{}]\n", methods.join(", ")));
        s.push_str(&format!("sample_fraction = {:?}\n", self.sample_fraction));
        s.push_str(&format!("jobs = {}\n", self.jobs));
        if let Some(out) = &self.out {
            s.push_str(&format!("out = {:?}\n", out.display().to_string()));
        }
        s
    }
}

const SWEEP_KEYS: [&str; 7] = [
    "variable",
    "values",
    "realizations",
    "methods",
    "sample_fraction",
    "jobs",
    "out",
];

fn bad(key: &str, want: &str) -> Error {
    Error::Config(format!("`{key}` must be {want}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number")),
    }
}

fn as_count(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 1 => Ok(*i as usize),
        _ => Err(bad(key, "a positive integer")),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string"))
}

fn as_array<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| bad(key, "a list"))
}

/// Parses flat `key = value` config text. Missing keys keep their defaults;
/// unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(Error::Config(format!("`{key}`: sections are not supported, keys must be flat")));
    }

    let mut cfg = ExperimentConfig::default();
    for key in SWEEP_KEYS {
        let Some(v) = table.remove(key) else { continue };
        match key {
            "variable" => cfg.variable = as_str(key, &v)?.parse()?,
            "values" => {
                cfg.values = as_array(key, &v)?
                    .iter()
                    .map(|x| as_f64(key, x))
                    .collect::<Result<_>>()?
            }
            "realizations" => cfg.realizations = as_count(key, &v)?,
            "methods" => {
                cfg.methods = as_array(key, &v)?
                    .iter()
                    .map(|x| as_str(key, x)?.parse())
                    .collect::<Result<_>>()?
            }
            "sample_fraction" => cfg.sample_fraction = as_f64(key, &v)?,
            "jobs" => cfg.jobs = as_count(key, &v)?,
            "out" => cfg.out = Some(PathBuf::from(as_str(key, &v)?)),
            _ => unreachable!(),
        }
    }

    if !(cfg.sample_fraction > 0.0 && cfg.sample_fraction <= 1.0) {
        return Err(bad("sample_fraction", "in (0, 1]"));
    }
    if cfg.values.is_empty() {
        return Err(bad("values", "a non-empty list"));
    }
    cfg.system = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.system.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}
