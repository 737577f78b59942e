//! Result tables with the configuration that produced them.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stability_analysis::Modes;

/// One value in a result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn sort_key(&self) -> (f64, &str) {
        match self {
            Cell::Int(v) => (*v as f64, ""),
            Cell::Float(v) => (*v, ""),
            Cell::Text(s) => (f64::INFINITY, s.as_str()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Shortest round-trip decimal, switching to exponent notation for very
/// small or large magnitudes.
pub fn format_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
        }
    }
}

/// A sweep as a table, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub experiment: String,
    pub config_hash: String,
    pub modes: Modes,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub config: serde_json::Value,
}

impl SweepResult {
    pub fn new<C: Serialize>(
        experiment: &str,
        config: &C,
        modes: Modes,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            experiment: experiment.into(),
            config_hash: config_hash(&config)?,
            modes,
            columns,
            rows: Vec::new(),
            config,
        })
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Orders rows by their leading `keys` columns.
    pub fn sort_by_columns(&mut self, keys: usize) {
        self.rows.sort_by(|a, b| {
            for i in 0..keys {
                let (x, y) = (a[i].sort_key(), b[i].sort_key());
                let ord = x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1));
                if ord.is_ne() {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        });
    }

    /// CSV with a `name [unit]` header; every row carries the config hash
    /// and the modes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::Config(format!("writing csv: {e}"));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                if c.unit.is_empty() {
                    c.name.clone()
                } else {
                    format!("{} [{}]", c.name, c.unit)
                }
            })
            .collect();
        header.extend(["rate_units", "pbb_form", "pus_form", "config_hash"].map(String::from));
        w.write_record(&header).map_err(err)?;
        let modes = [
            mode_name(&self.modes.rate_units),
            mode_name(&self.modes.pbb_form),
            mode_name(&self.modes.pus_form),
        ];
        for row in &self.rows {
            let mut record: Vec<String> = row.iter().map(Cell::render).collect();
            record.extend(modes.iter().cloned());
            record.push(self.config_hash.clone());
            w.write_record(&record).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Config(format!("writing csv: {e}")))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn mode_name<T: Serialize>(mode: &T) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
