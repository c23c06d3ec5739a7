//! Flat `key = value` text documents.
//!
//! Used for model files, run configs and metric reports. Keys keep insertion
//! order on write. Floats are written in Rust's shortest round-trip form, so a
//! load/save cycle reproduces the document byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDocument {
    entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_schema(schema: &str) -> Self {
        let mut doc = Self::new();
        doc.set("schema", schema);
        doc
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, fmt_f64(value));
    }

    pub fn set_f64s(&mut self, key: &str, values: impl IntoIterator<Item = f64>) {
        let joined = values
            .into_iter()
            .map(fmt_f64)
            .collect::<Vec<_>>()
            .join(" ");
        self.set(key, joined);
    }

    pub fn set_usizes(&mut self, key: &str, values: impl IntoIterator<Item = usize>) {
        let joined = values
            .into_iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        self.set(key, joined);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse {
            context: key.to_string(),
            message: "missing key".into(),
        })
    }

    pub fn require_schema(&self, schema: &str) -> Result<()> {
        let found = self.require("schema")?;
        if found == schema {
            Ok(())
        } else {
            Err(Error::Parse {
                context: "schema".into(),
                message: format!("expected {schema}, found {found}"),
            })
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.require(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| Error::Parse {
            context: key.to_string(),
            message: format!("not an unsigned integer: {raw}"),
        })
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?
            .split_whitespace()
            .map(|tok| parse_f64(key, tok))
            .collect()
    }

    pub fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        self.require(key)?
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| Error::Parse {
                    context: key.to_string(),
                    message: format!("not an unsigned integer: {tok}"),
                })
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                context: format!("line {}", lineno + 1),
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    context: format!("line {}", lineno + 1),
                    message: "empty key".into(),
                });
            }
            if doc.get(key).is_some() {
                return Err(Error::Parse {
                    context: format!("line {}", lineno + 1),
                    message: format!("duplicate key {key}"),
                });
            }
            doc.entries
                .push((key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if v.is_empty() {
                let _ = writeln!(out, "{k} =");
            } else {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Shortest representation that parses back to the identical bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(key: &str, raw: &str) -> Result<f64> {
    raw.parse().map_err(|_| Error::Parse {
        context: key.to_string(),
        message: format!("not a number: {raw}"),
    })
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
