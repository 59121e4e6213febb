//! JSON config files layered over built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Reads a JSON object from `path`.
pub fn read_object(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !v.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(v)
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `default` with the keys of `patch` written over it, recursively.
pub fn overlay<T: Serialize + DeserializeOwned>(default: &T, patch: Option<&Value>) -> Result<T> {
    let mut v = serde_json::to_value(default)?;
    if let Some(p) = patch {
        merge(&mut v, p);
    }
    Ok(serde_json::from_value(v)?)
}

/// Section `key` of a config file, if present.
pub fn section<'a>(file: Option<&'a Value>, key: &str) -> Option<&'a Value> {
    file.and_then(|f| f.get(key))
}
