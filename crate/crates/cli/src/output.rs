//! Tables and reports, written atomically into the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            // 17 significant digits round-trip every f64.
            Cell::Num(x) => format!("{x:.16e}"),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Num(x) => json!(x),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(i64::from(x))
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect()))
            .collect();
        json!({ "schema": SCHEMA, "columns": self.columns, "rows": rows })
    }
}

pub struct OutDir {
    dir: PathBuf,
    format: Format,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), format, written: Vec::new() })
    }

    /// Writes `stem.csv` or `stem.json` depending on the format.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), &table.to_csv()),
            Format::Json => self.write(&format!("{stem}.json"), &pretty(&table.to_json())),
        }
    }

    /// Writes a JSON report with a `schema` field added; a report that is
    /// not an object goes under `value`.
    pub fn report(&mut self, name: &str, report: &impl Serialize) -> Result<(), CliError> {
        let body = serde_json::to_value(report).map_err(|e| CliError::Io(e.to_string()))?;
        let mut obj = serde_json::Map::new();
        obj.insert("schema".into(), json!(SCHEMA));
        match body {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("value".into(), other);
            }
        }
        self.write(name, &pretty(&Value::Object(obj)))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        self.written.push(path);
        Ok(())
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips() {
        let mut t = Table::new(["k", "x", "y"]);
        let x = 3.0 / 14.0;
        t.push(vec![Cell::from(4usize), x.into(), Cell::Empty]);
        let csv = t.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "4");
        assert_eq!(fields[1].parse::<f64>().unwrap(), x);
        assert_eq!(fields[2], "");
    }

    #[test]
    fn json_tables_are_versioned() {
        let mut t = Table::new(["a"]);
        t.push(vec![1.5.into()]);
        let v = t.to_json();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["rows"][0]["a"], 1.5);
    }
}
