//! Typed configuration from defaults, an optional JSON file and
//! `key.path=value` overrides, applied in that order.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// `a.b.c=value`. The value is read as JSON when it parses and as a string
/// otherwise, so `sigma=[1.5,6,6]` and `backend=graphcut` both work. Every
/// key but a new leaf must already exist, which catches typos.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').with_context(|| format!("override {spec:?} is not key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override key {key:?} has an empty segment");
        }
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else { bail!("override {key:?}: {:?} is not an object", parts[..i].join(".")) };
        if i + 1 == parts.len() {
            if !map.contains_key(*part) && !map.is_empty() {
                bail!("override {key:?}: unknown key {part:?} (known: {})", map.keys().cloned().collect::<Vec<_>>().join(", "));
            }
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.get_mut(*part).with_context(|| format!("override {key:?}: unknown key {part:?}"))?;
    }
    unreachable!("split yields at least one part")
}

/// Keys of `patch` that `base` does not know. Empty or null nodes (maps and
/// unset options) accept anything.
fn unknown_keys(base: &Value, patch: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        if b.is_empty() {
            return;
        }
        for (k, v) in p {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match b.get(k) {
                Some(bv) => unknown_keys(bv, v, &path, out),
                None => out.push(path),
            }
        }
    }
}

pub fn load<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &patch, "", &mut unknown);
        if !unknown.is_empty() {
            bail!("config {}: unknown keys {}", path.display(), unknown.join(", "));
        }
        merge(&mut value, patch);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).context("invalid configuration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        sigma: [f64; 3],
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Outer {
        inner: Inner,
        count: usize,
        path: Option<String>,
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"count": 3, "inner": {"name": "a"}}"#).unwrap();
        let o: Outer = load(Some(&file), &["inner.sigma=[1.5,6,6]".into(), "path=out/x".into()]).unwrap();
        assert_eq!(o, Outer { inner: Inner { sigma: [1.5, 6.0, 6.0], name: "a".into() }, count: 3, path: Some("out/x".into()) });
    }

    #[test]
    fn typos_and_bad_values_are_errors() {
        assert!(load::<Outer>(None, &["inner.sigmaa=[1,1,1]".into()]).is_err());
        assert!(load::<Outer>(None, &["count=many".into()]).is_err());
        assert!(load::<Outer>(None, &["count".into()]).is_err());
        assert!(load::<Outer>(None, &["count.x=1".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"inner": {"sigma": [1, 2, 3], "enabled": false}}"#).unwrap();
        let err = load::<Outer>(Some(&file), &[]).unwrap_err().to_string();
        assert!(err.contains("inner.enabled"), "{err}");
    }
}
