//! Tabular output rendering. Every command produces a [`Report`]: one
//! primary table plus status notes and failure messages. The table renders
//! as CSV (floats printed with 17 significant digits, enough to round-trip
//! every finite `f64` exactly) or as a JSON document that also carries the
//! status and failures. Both renderings hold bit-identical numeric values.

use serde_json::{json, Value};
use std::fmt::Write as _;

/// Output encoding selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

/// A named-column table of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

fn csv_escape(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_owned()
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|&c| c.to_owned()).collect(), rows: Vec::new() }
    }

    /// Append one row; its length must match the header.
    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match column count");
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Render as CSV with a header line. Floats use `{:.16e}` — 17
    /// significant digits, the shortest count that round-trips every
    /// finite `f64` bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                match cell {
                    Cell::Float(v) => write!(out, "{v:.16e}").unwrap(),
                    Cell::Int(v) => write!(out, "{v}").unwrap(),
                    Cell::Text(v) => out.push_str(&csv_escape(v)),
                    Cell::Bool(v) => write!(out, "{v}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Render as a JSON value `{"columns": [...], "rows": [[...], ...]}`.
    /// The explicit column list keeps the order that a JSON object would
    /// not guarantee.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Array(
                    row.iter()
                        .map(|cell| match cell {
                            Cell::Float(v) => json!(v),
                            Cell::Int(v) => json!(v),
                            Cell::Text(v) => json!(v),
                            Cell::Bool(v) => json!(v),
                        })
                        .collect(),
                )
            })
            .collect();
        json!({"columns": self.columns, "rows": rows})
    }
}

/// The result of one command run: the table to write, human-oriented
/// status notes, and failed-check messages (any failure makes the process
/// exit nonzero).
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub status: Vec<(String, String)>,
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(table: Table) -> Self {
        Report { table, status: Vec::new(), failures: Vec::new() }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.status.push((key.to_owned(), value.to_string()));
    }

    pub fn fail(&mut self, message: impl ToString) {
        self.failures.push(message.to_string());
    }

    /// Primary payload in the requested encoding. CSV carries the table
    /// alone (status goes to stderr); JSON is a complete self-describing
    /// report.
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.table.to_csv(),
            Format::Json => {
                let status: Vec<Value> =
                    self.status.iter().map(|(k, v)| json!([k, v])).collect();
                let doc = json!({
                    "table": self.table.to_json(),
                    "status": status,
                    "failures": self.failures,
                });
                let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
                text.push('\n');
                text
            }
        }
    }

    /// `key=value` status lines plus `FAIL:` lines, for stderr.
    pub fn status_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.status {
            writeln!(out, "{k}={v}").unwrap();
        }
        for f in &self.failures {
            writeln!(out, "FAIL: {f}").unwrap();
        }
        out
    }
}
