//! CSV and JSON writers.

use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Seventeen significant digits: enough to read back the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Named columns of equal length.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: &[&str]) -> Self {
        Table {
            names: names.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (col, &v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for i in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| fmt_float(c[i])))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Column name → array of values.
    pub fn to_json(&self) -> Map<String, Value> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.clone(), Value::from(c.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// Integrator or `closed_form`.
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(
        cfg: &RunConfig,
        backend: impl Into<String>,
        tol: Option<f64>,
        steps: Option<usize>,
    ) -> Self {
        Provenance {
            tool: "sta-coupler",
            version: env!("CARGO_PKG_VERSION"),
            command: cfg.name(),
            backend: backend.into(),
            tol,
            steps,
            config: cfg.for_provenance(),
        }
    }
}

/// Writes `payload` with a `provenance` entry added, pretty-printed.
pub fn write_json<W: Write>(
    mut out: W,
    mut payload: Map<String, Value>,
    provenance: &Provenance,
) -> Result<(), CliError> {
    payload.insert("provenance".into(), serde_json::to_value(provenance)?);
    serde_json::to_writer_pretty(&mut out, &Value::Object(payload))?;
    writeln!(out)?;
    Ok(())
}
