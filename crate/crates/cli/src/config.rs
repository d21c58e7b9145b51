//! Config layering: profile defaults, then the config file, then flags.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::manifest::{load_value, CliError, CliResult};
use crate::Common;

/// Recursively overlays `over` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted key; the value is parsed as JSON, else taken as a string.
pub fn set_key(root: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::config(format!("empty segment in key `{key}`")));
        }
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
    Ok(())
}

/// Builds a command config from `defaults` and the common flags.
/// `seed_key` receives `--seed`; `extra` holds flag values for other keys.
pub fn resolve<T: Serialize + DeserializeOwned>(
    common: &Common,
    command: &str,
    defaults: &T,
    seed_key: &str,
    extra: &[(&str, Option<Value>)],
) -> CliResult<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(path) = &common.config {
        merge(&mut v, load_value(path, command)?);
    }
    for (key, val) in extra {
        if let Some(val) = val {
            set_key(&mut v, key, &val.to_string())?;
        }
    }
    if let Some(seed) = common.seed {
        set_key(&mut v, seed_key, &seed.to_string())?;
    }
    for s in &common.set {
        let (k, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        set_key(&mut v, k.trim(), raw.trim())?;
    }
    serde_json::from_value(v).map_err(|e| CliError::config(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_keys() {
        let mut a = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut a, json!({"b": {"d": 4}, "e": 5}));
        assert_eq!(a, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": 5}));
    }

    #[test]
    fn set_key_parses_json_or_string() {
        let mut a = json!({"train": {"lr": 0.1}});
        set_key(&mut a, "train.lr", "0").unwrap();
        set_key(&mut a, "train.regime", "multi").unwrap();
        set_key(&mut a, "x.y", "[1,2]").unwrap();
        assert_eq!(a, json!({"train": {"lr": 0, "regime": "multi"}, "x": {"y": [1, 2]}}));
    }
}
