//! Flag defaults from a JSON settings file.
//!
//! The file is an object whose scalar entries apply to every subcommand and
//! whose object entries, keyed by subcommand name, apply to that subcommand
//! only. Keys are flag names with `-` replaced by `_`. Flags given on the
//! command line win.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub fn load(path: Option<&Path>) -> CliResult<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("settings {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::usage("settings file must hold a JSON object"));
    }
    Ok(value)
}

/// Overlay the flags in `cli` onto the settings for `section`.
pub fn resolve<T: Serialize + DeserializeOwned>(
    cli: &T,
    settings: &Value,
    section: &str,
) -> CliResult<T> {
    let mut merged = Map::new();
    if let Value::Object(top) = settings {
        for (k, v) in top {
            if !v.is_object() {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Object(sec)) = top.get(section) {
            merged.extend(sec.clone());
        }
    }
    let Value::Object(flags) = serde_json::to_value(cli).expect("flag structs serialize") else {
        unreachable!("flag structs serialize to objects");
    };
    for (k, v) in flags {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::usage(format!("settings for {section}: {e}")))
}

/// SNR in dB; `inf` disables noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snr(pub f64);

impl FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => Ok(Snr(f64::INFINITY)),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Snr)
                .ok_or_else(|| format!("invalid SNR {s:?} (a number of dB or inf)")),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
