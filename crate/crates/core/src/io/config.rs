//! INI-style run configuration.
//!
//! ```text
//! [update_pixel_map]
//! sigma = 5
//! integrate = True
//! window = 4, 4
//! ```
//!
//! Sections are command names. Keys before the first section apply to every
//! command that accepts them. Values are typed by the parameter registry;
//! keys the registry does not know are kept with an inferred type and listed
//! in [`RunConfig::unknown`].

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Float,
    Int,
    Bool,
    Text,
    Floats,
    Ints,
    Bools,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Float => "float",
            ParamKind::Int => "int",
            ParamKind::Bool => "bool",
            ParamKind::Text => "text",
            ParamKind::Floats => "float list",
            ParamKind::Ints => "int list",
            ParamKind::Bools => "bool list",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Float(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Floats(Vec<f64>),
    Ints(Vec<i64>),
    Bools(Vec<bool>),
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "True" | "true" => Some(true),
        "False" | "false" => Some(false),
        _ => None,
    }
}

fn items(s: &str) -> Vec<&str> {
    let s = s.trim().trim_start_matches(['[', '(']).trim_end_matches([']', ')']);
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn list<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let v = items(s);
    if v.is_empty() {
        return None;
    }
    v.into_iter().map(f).collect()
}

impl ParamValue {
    /// Parses `raw` as `kind`; `None` when it does not fit.
    pub fn parse(kind: ParamKind, raw: &str) -> Option<Self> {
        let raw = raw.trim();
        let int = |s: &str| s.parse::<i64>().ok();
        let float = |s: &str| s.parse::<f64>().ok();
        match kind {
            ParamKind::Float => float(raw).map(ParamValue::Float),
            ParamKind::Int => int(raw).map(ParamValue::Int),
            ParamKind::Bool => parse_bool(raw).map(ParamValue::Bool),
            ParamKind::Text => Some(ParamValue::Text(raw.trim_matches(['"', '\'']).to_string())),
            ParamKind::Floats => list(raw, float).map(ParamValue::Floats),
            ParamKind::Ints => list(raw, int).map(ParamValue::Ints),
            ParamKind::Bools => list(raw, parse_bool).map(ParamValue::Bools),
        }
    }

    /// Best-effort typing for keys without a registered kind.
    pub fn infer(raw: &str) -> Self {
        [ParamKind::Bool, ParamKind::Int, ParamKind::Float, ParamKind::Ints, ParamKind::Floats]
            .into_iter()
            .find_map(|k| Self::parse(k, raw))
            .unwrap_or_else(|| ParamValue::Text(raw.trim().to_string()))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Float(v) => Some(v),
            ParamValue::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    /// Scalars and lists as a float list.
    pub fn as_f64s(&self) -> Option<Vec<f64>> {
        match self {
            ParamValue::Floats(v) => Some(v.clone()),
            ParamValue::Ints(v) => Some(v.iter().map(|&x| x as f64).collect()),
            _ => self.as_f64().map(|v| vec![v]),
        }
    }

    pub fn as_i64s(&self) -> Option<Vec<i64>> {
        match self {
            ParamValue::Ints(v) => Some(v.clone()),
            ParamValue::Int(v) => Some(vec![*v]),
            _ => None,
        }
    }

    pub fn as_bools(&self) -> Option<Vec<bool>> {
        match self {
            ParamValue::Bools(v) => Some(v.clone()),
            ParamValue::Bool(v) => Some(vec![*v]),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join<T: fmt::Display>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        }
        let b = |v: bool| if v { "True" } else { "False" };
        match self {
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Bool(v) => f.write_str(b(*v)),
            ParamValue::Text(v) => f.write_str(v),
            ParamValue::Floats(v) => f.write_str(&join(v)),
            ParamValue::Ints(v) => f.write_str(&join(v)),
            ParamValue::Bools(v) => f.write_str(&v.iter().map(|&x| b(x)).collect::<Vec<_>>().join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: ParamValue,
    pub line: usize,
}

/// Parsed configuration. The section `""` holds keys given before any header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub sections: BTreeMap<String, BTreeMap<String, Entry>>,
    /// `section.key` (or `section` for unknown headers) not in the registry.
    pub unknown: Vec<String>,
}

/// Looks up the registered kind of `key` in `section`; `Err(())` means the
/// section itself is unknown.
pub type KindLookup<'a> = &'a dyn Fn(&str, &str) -> std::result::Result<Option<ParamKind>, ()>;

impl RunConfig {
    /// Section value, falling back to the global section.
    pub fn get(&self, section: &str, key: &str) -> Option<&ParamValue> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .or_else(|| self.sections.get("").and_then(|s| s.get(key)))
            .map(|e| &e.value)
    }

    /// Parses `text`, typing values with `lookup`.
    pub fn parse_with(text: &str, lookup: KindLookup) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let err = |msg: String| Error::Config { line: line_no, msg };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("unterminated section header {line:?}")))?;
                section = name.trim().to_string();
                if lookup(&section, "").is_err() && !cfg.unknown.contains(&section) {
                    cfg.unknown.push(section.clone());
                }
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(err("empty key".to_string()));
            }
            let value = match lookup(&section, &key) {
                Ok(Some(kind)) => ParamValue::parse(kind, value)
                    .ok_or_else(|| err(format!("{key}: cannot parse {:?} as {kind}", value.trim())))?,
                Ok(None) => {
                    cfg.unknown.push(if section.is_empty() { key.clone() } else { format!("{section}.{key}") });
                    ParamValue::infer(value)
                }
                Err(()) => ParamValue::infer(value),
            };
            let entries = cfg.sections.entry(section.clone()).or_default();
            if entries.contains_key(&key) {
                return Err(err(format!("duplicate key {key} in section [{section}]")));
            }
            entries.insert(key, Entry { value, line: line_no });
        }
        Ok(cfg)
    }
}

/// Parses a configuration against the built-in command registry.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    RunConfig::parse_with(text, &crate::pipeline::param_kind)
}
