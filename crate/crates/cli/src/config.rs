//! Layered run configuration: defaults, then a JSON config file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_GENERATION: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn overlay(base: &mut Map<String, Value>, top: &Map<String, Value>) {
    for (k, v) in top {
        base.insert(k.clone(), v.clone());
    }
}

fn as_object(v: Value, what: &str) -> CliResult<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::input(format!("{what} must be a JSON object"))),
    }
}

/// Merges `R::default()`, the config file (its `section` object if present,
/// else the whole document) and the flags that were given.
pub fn resolve<F, R>(section: &str, config: Option<&Path>, flags: &F) -> CliResult<R>
where
    F: Serialize,
    R: Serialize + DeserializeOwned + Default,
{
    let mut merged = as_object(serde_json::to_value(R::default()).unwrap(), "defaults")?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        let doc = match doc.get(section) {
            Some(Value::Object(inner)) => Value::Object(inner.clone()),
            _ => doc,
        };
        overlay(&mut merged, &as_object(doc, "config file")?);
    }
    overlay(
        &mut merged,
        &as_object(serde_json::to_value(flags).unwrap(), "flags")?,
    );
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::input(format!("invalid configuration: {e}")))
}

/// `<path>.<suffix>` next to an output file.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).unwrap();
    text.push('\n');
    namerepair::io::write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value
        .clone()
        .ok_or_else(|| CliError::input(format!("missing required option --{flag}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Resolved {
        k: usize,
        seed: u64,
        name: Option<String>,
    }

    impl Default for Resolved {
        fn default() -> Self {
            Resolved {
                k: 10,
                seed: 1,
                name: None,
            }
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"eval": {"k": 5, "seed": 9, "name": "x"}}"#).unwrap();
        let r: Resolved = resolve("eval", Some(&cfg), &Flags { k: Some(3), seed: None }).unwrap();
        assert_eq!(r, Resolved { k: 3, seed: 9, name: Some("x".into()) });
        let r: Resolved = resolve("eval", None, &Flags { k: None, seed: None }).unwrap();
        assert_eq!(r, Resolved::default());
        std::fs::write(&cfg, r#"{"kk": 5}"#).unwrap();
        let e = resolve::<_, Resolved>("eval", Some(&cfg), &Flags { k: None, seed: None });
        assert_eq!(e.unwrap_err().code, EXIT_INPUT);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/x.jsonl"), "config.json"), Path::new("out/x.jsonl.config.json"));
    }
}
