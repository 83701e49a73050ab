//! Flat `key = value` configuration files with dotted keys.
//!
//! Any serde-serializable config struct is viewed as a map from dotted
//! paths (`loss.lambda_gp`) to leaf values. Files and `key=value` overrides
//! are applied in order; unknown keys and ill-typed values are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Leaf values of `v` keyed by dotted path.
pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

fn parse_like(template: &Value, raw: &str, key: &str) -> Result<Value> {
    let bad = |what: &str| Error::Config(format!("{key}: cannot read {raw:?} as {what}"));
    let raw = raw.trim();
    Ok(match template {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("a boolean"))?),
        Value::Number(n) if n.is_u64() || n.is_i64() => match raw.parse::<u64>() {
            Ok(v) => Value::from(v),
            Err(_) => Value::from(raw.parse::<i64>().map_err(|_| bad("an integer"))?),
        },
        Value::Number(_) => {
            let f: f64 = raw.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        Value::Array(items) => {
            let inner = raw.trim_start_matches('[').trim_end_matches(']');
            let parsed: Result<Vec<Value>> = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| match items.first() {
                    Some(elem) => parse_like(elem, s, key),
                    None => Ok(Value::String(unquote(s).to_string())),
                })
                .collect();
            Value::Array(parsed?)
        }
        _ => Value::String(unquote(raw).to_string()),
    })
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && ((s.starts_with('"') && s.ends_with('"')) || (s.starts_with('\'') && s.ends_with('\''))) {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        node = node.get_mut(*p).expect("path checked against the template");
    }
    node[parts[parts.len() - 1]] = value;
}

/// A config struct with dotted-key overrides.
pub trait FlatConfig: Serialize + DeserializeOwned + Sized {
    /// Applies one `key=value` assignment.
    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let leaves = flatten(&tree);
        let key = key.trim();
        let template = leaves.get(key).ok_or_else(|| {
            Error::Config(format!(
                "unknown key {key:?}; known keys: {}",
                leaves.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let value = parse_like(template, raw, key)?;
        set_path(&mut tree, key, value);
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies a `key=value` override string.
    fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Applies every assignment of a config file. Blank lines and lines
    /// starting with `#` are ignored.
    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `key = value` lines that reproduce this config when applied.
    fn to_flat_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in flatten(&tree) {
            let shown = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {shown}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Inner {
        rate: f64,
        on: bool,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Demo {
        steps: u64,
        offset: i32,
        name: String,
        poses: Vec<i32>,
        inner: Inner,
    }

    impl FlatConfig for Demo {}

    fn demo() -> Demo {
        Demo {
            steps: 3,
            offset: -1,
            name: "a".into(),
            poses: vec![0],
            inner: Inner { rate: 0.5, on: false },
        }
    }

    #[test]
    fn dotted_overrides_and_round_trip() {
        let mut d = demo();
        d.apply_text("# comment\nsteps = 10\n\ninner.rate=2e-4\ninner.on = true\nname = \"x y\"\nposes = -15, 0, 15\noffset=-3")
            .unwrap();
        assert_eq!(d.steps, 10);
        assert_eq!(d.inner, Inner { rate: 2e-4, on: true });
        assert_eq!(d.name, "x y");
        assert_eq!(d.poses, vec![-15, 0, 15]);
        assert_eq!(d.offset, -3);
        let mut back = demo();
        back.apply_text(&d.to_flat_text()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut d = demo();
        assert!(matches!(d.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(d.set("steps", "-1"), Err(Error::Config(_))));
        assert!(matches!(d.set("inner.on", "maybe"), Err(Error::Config(_))));
        assert!(matches!(d.apply_override("steps"), Err(Error::Config(_))));
        assert_eq!(d, demo());
    }
}
