//! Layered run configuration: defaults, then a JSON file, then flags, then
//! `--set key=value` overrides. The resolved result is snapshotted.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::UsageError;

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn apply_override(target: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override {spec:?} is not key=value")))?;
    if key.is_empty() {
        return Err(UsageError(format!("override {spec:?} has an empty key")).into());
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = target;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => return Err(UsageError(format!("override {key:?}: {} is not an object", parts[..i].join("."))).into()),
        };
        if !obj.contains_key(*part) {
            return Err(UsageError(format!("override {key:?}: unknown key {part:?}")).into());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    *node = value;
    Ok(())
}

/// Resolves a run configuration. `flags` holds the explicitly given
/// command-line options as a partial object.
pub fn resolve<C: Serialize + DeserializeOwned>(
    defaults: &C,
    file: Option<&Path>,
    flags: Map<String, Value>,
    overrides: &[String],
) -> Result<C> {
    let mut value = serde_json::to_value(defaults)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let layer: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut value, layer);
    }
    merge(&mut value, Value::Object(flags));
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| UsageError(format!("invalid configuration: {e}")).into())
}

/// Builds a partial object from `(dotted key, value)` pairs, skipping
/// absent flags.
pub fn flags(pairs: Vec<(&str, Option<Value>)>) -> Map<String, Value> {
    let mut root = Value::Object(Map::new());
    for (key, value) in pairs {
        let Some(value) = value else { continue };
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .expect("flag paths only traverse objects")
                .entry(part)
                .or_insert_with(|| Value::Object(Map::new()));
        }
        *node = value;
    }
    match root {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Files produced by a run, recorded relative to its output directory.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.files.push(rel.to_string_lossy().replace('\\', "/"));
    }

    /// Writes the resolved configuration as `config.json`.
    pub fn snapshot<S: Serialize>(&mut self, config: &S) -> Result<()> {
        let path = self.path("config.json");
        write_json(&path, config)?;
        self.record(&path);
        Ok(())
    }

    /// Writes `artifacts.json` listing every recorded file.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        self.files.dedup();
        let path = self.path("artifacts.json");
        write_json(&path, &serde_json::json!({ "files": self.files }))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        lr: f64,
        name: String,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Outer {
        epochs: usize,
        inner: Inner,
    }

    fn defaults() -> Outer {
        Outer {
            epochs: 3,
            inner: Inner {
                lr: 0.1,
                name: "a".into(),
            },
        }
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"epochs": 7, "inner": {"lr": 0.5}}"#).unwrap();
        let f = flags(vec![("inner.name", Some(json!("b"))), ("epochs", None)]);
        let out: Outer = resolve(&defaults(), Some(&file), f, &["inner.lr=0.25".into()]).unwrap();
        assert_eq!(out.epochs, 7);
        assert_eq!(out.inner.lr, 0.25);
        assert_eq!(out.inner.name, "b");
    }

    #[test]
    fn overrides_reject_unknown_keys_and_bad_syntax() {
        let mut v = serde_json::to_value(defaults()).unwrap();
        assert!(apply_override(&mut v, "inner.beta=1").is_err());
        assert!(apply_override(&mut v, "epochs").is_err());
        assert!(apply_override(&mut v, "epochs.x=1").is_err());
        apply_override(&mut v, "inner.name=plain text").unwrap();
        assert_eq!(v["inner"]["name"], "plain text");
    }

    #[test]
    fn type_errors_surface_as_usage() {
        let err = resolve::<Outer>(&defaults(), None, Map::new(), &["epochs=\"many\"".into()]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
