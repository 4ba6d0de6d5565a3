//! Output files are assembled in memory and written together with a
//! manifest of their SHA-256 hashes.
//!
//! CSV and JSONL files start with `#` comment lines naming the tool
//! version, schema version, preset and the resolved config; JSON files carry
//! the same data under a `_header` key. Nothing machine-dependent (worker
//! count, time, paths) enters any file, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Override, ScenarioConfig, SCHEMA_VERSION};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Outputs {
    header: Value,
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn new(config: &ScenarioConfig) -> Self {
        let header = json!({
            "tool": "qmeter",
            "version": VERSION,
            "schema_version": SCHEMA_VERSION,
            "preset": config.preset,
            "config": config.to_value(),
        });
        Self {
            header,
            files: BTreeMap::new(),
        }
    }

    fn comment_header(&self) -> String {
        format!(
            "# qmeter {VERSION} schema {SCHEMA_VERSION} preset {}\n# config {}\n",
            self.header["preset"].as_str().unwrap_or("none"),
            self.header["config"]
        )
    }

    /// CSV with a comment header and a column row. Values are written with
    /// the shortest round-trip representation.
    pub fn csv(&mut self, name: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) {
        let mut text = self.comment_header();
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), columns.len(), "{name}");
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.files.insert(name.into(), text.into_bytes());
    }

    pub fn jsonl(&mut self, name: &str, lines: impl IntoIterator<Item = Value>) {
        let mut text = self.comment_header();
        for v in lines {
            writeln!(text, "{v}").expect("write to string");
        }
        self.files.insert(name.into(), text.into_bytes());
    }

    /// Pretty JSON object with the header merged in under `_header`.
    pub fn json(&mut self, name: &str, mut value: Value) {
        if let Value::Object(map) = &mut value {
            map.insert("_header".into(), self.header.clone());
        }
        let mut text = serde_json::to_string_pretty(&value).expect("json serialises");
        text.push('\n');
        self.files.insert(name.into(), text.into_bytes());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn manifest(&self, config: &ScenarioConfig, overrides: &[Override]) -> Value {
        let hashes: BTreeMap<&str, String> = self
            .files
            .iter()
            .map(|(k, v)| (k.as_str(), sha256_hex(v)))
            .collect();
        json!({
            "_header": self.header,
            "config": config.to_value(),
            "master_seed": config.run.master_seed,
            "overrides": overrides,
            "files": hashes,
        })
    }

    /// Write every file plus `manifest.json` into `dir`.
    pub fn write(
        &self,
        dir: &Path,
        config: &ScenarioConfig,
        overrides: &[Override],
    ) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        let mut text = serde_json::to_string_pretty(&self.manifest(config, overrides))
            .expect("json serialises");
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format!("{v:?}"),
            Cell::I(v) => v.to_string(),
            Cell::U(v) => v.to_string(),
            Cell::S(v) => v.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::I(v.into())
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::F)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.into())
    }
}
