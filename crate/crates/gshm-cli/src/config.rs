//! JSON config file support: every flag can come from a config file under
//! the same key as the long flag name, with explicit flags taking
//! precedence.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::CliError;

#[derive(Default)]
pub(crate) struct FileCfg(Map<String, Value>);

impl FileCfg {
    pub(crate) fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("parsing {}: {e}", path.display())))?;
        match value {
            Value::Object(map) => Ok(Self(map)),
            _ => Err(CliError::Io(format!(
                "{}: config must be a JSON object keyed by flag names",
                path.display()
            ))),
        }
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub(crate) fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| bad_type(key, "a number")),
        }
    }

    pub(crate) fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| bad_type(key, "a nonnegative integer")),
        }
    }

    pub(crate) fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| bad_type(key, "a boolean")),
        }
    }

    pub(crate) fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_owned()))
                .ok_or_else(|| bad_type(key, "a string")),
        }
    }

    pub(crate) fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| bad_type(key, "numbers")))
                .collect::<Result<Vec<f64>, CliError>>()
                .map(Some),
            Some(_) => Err(bad_type(key, "an array of numbers")),
        }
    }
}

fn bad_type(key: &str, want: &str) -> CliError {
    CliError::Io(format!("config key {key:?}: expected {want}"))
}

/// A value that must be present after merging flags and config.
pub(crate) fn req<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "missing --{flag} (pass the flag or set {flag:?} in --config)"
        ))
    })
}
