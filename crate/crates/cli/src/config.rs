//! Resolved command configuration: defaults, then a config file, then
//! `--set key=value` overrides, then explicit flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{usage, Result};

/// Recursively overlay `top` onto `base`. Objects merge key by key.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(usage)
    }
}

/// `a.b.c=value`. The value is read as JSON when it parses, else as a string.
pub fn parse_set(s: &str) -> Result<Value> {
    let (key, raw) = s.split_once('=').ok_or_else(|| usage(format!("--set `{s}`: expected key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(usage(format!("--set `{s}`: empty key")));
    }
    let mut v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), v);
        v = Value::Object(m);
    }
    Ok(v)
}

/// Build a command config. Unknown keys are rejected by the target type.
pub fn resolve<C, F>(file: Option<&Path>, sets: &[String], flags: &F) -> Result<(C, Value)>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut v = serde_json::to_value(C::default()).map_err(usage)?;
    if let Some(p) = file {
        merge(&mut v, read_file(p)?);
    }
    for s in sets {
        merge(&mut v, parse_set(s)?);
    }
    merge(&mut v, strip_nulls(serde_json::to_value(flags).map_err(usage)?));
    let cfg: C = serde_json::from_value(v).map_err(|e| usage(format!("config: {e}")))?;
    let resolved = serde_json::to_value(&cfg).map_err(usage)?;
    Ok((cfg, resolved))
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.into_iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k, strip_nulls(v))).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        chains: usize,
        seed: u64,
    }

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Cfg {
        trials: usize,
        name: String,
        inner: Inner,
    }

    #[derive(Serialize)]
    struct Flags {
        trials: Option<usize>,
    }

    #[test]
    fn later_layers_win() {
        let sets = vec!["inner.chains=2".to_string(), "name=abc".to_string(), "trials=5".to_string()];
        let (c, _): (Cfg, _) = resolve(None, &sets, &Flags { trials: Some(9) }).unwrap();
        assert_eq!(c, Cfg { trials: 9, name: "abc".into(), inner: Inner { chains: 2, seed: 0 } });
        let (c, _): (Cfg, _) = resolve(None, &sets, &Flags { trials: None }).unwrap();
        assert_eq!(c.trials, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: Result<(Cfg, Value)> = resolve(None, &["inner.chainz=2".into()], &Flags { trials: None });
        assert!(r.is_err());
        assert!(parse_set("novalue").is_err());
        assert!(parse_set("a..b=1").is_err());
    }

    #[test]
    fn toml_file_is_merged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "trials = 3\n[inner]\nseed = 7\n").unwrap();
        let (c, resolved): (Cfg, _) = resolve(Some(&p), &[], &Flags { trials: None }).unwrap();
        assert_eq!((c.trials, c.inner.seed), (3, 7));
        assert_eq!(resolved["inner"], json!({"chains": 0, "seed": 7}));
    }
}
