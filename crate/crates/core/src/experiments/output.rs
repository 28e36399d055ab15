use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{ExperimentKind, OutputFormat};

/// `x` with 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format_float(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) if x.is_finite() => json!(x),
            Cell::Num(_) | Cell::Empty => Value::Null,
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj = self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }
}

/// Tabulated result of one experiment plus its provenance.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub table: Table,
    pub meta: Value,
    /// True when every solve converged (and, for `validate`, every check passed).
    pub converged: bool,
    pub summary: Vec<String>,
}

fn with_suffix(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_{suffix}"))
}

/// Writes `<prefix>_<experiment>.{csv,json}` and `<prefix>_meta.json`.
pub fn write_report(report: &RunReport, prefix: &str, format: OutputFormat) -> std::io::Result<Vec<PathBuf>> {
    if let Some(dir) = Path::new(prefix).parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = report.experiment.name();
    let data = match format {
        OutputFormat::Csv => {
            let path = with_suffix(prefix, &format!("{name}.csv"));
            std::fs::write(&path, report.table.to_csv())?;
            path
        }
        OutputFormat::Json => {
            let path = with_suffix(prefix, &format!("{name}.json"));
            let body = serde_json::to_string_pretty(&report.table.to_json()).expect("table serializes");
            std::fs::write(&path, body + "\n")?;
            path
        }
    };
    let meta_path = with_suffix(prefix, "meta.json");
    let meta = serde_json::to_string_pretty(&report.meta).expect("meta serializes");
    std::fs::write(&meta_path, meta + "\n")?;
    Ok(vec![data, meta_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 0.478_604_301_132_5, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let digits = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b", "flag"]);
        t.push(vec![1.5.into(), Cell::Empty, "x,y".into()]);
        t.push(vec![2usize.into(), Some(0.25).into(), "ok".into()]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "a,b,flag");
        assert_eq!(lines[1], "1.5000000000000000e0,,\"x,y\"");
        assert_eq!(lines[2], "2,2.5000000000000000e-1,ok");
        let js = t.to_json();
        assert_eq!(js[0]["b"], Value::Null);
        assert_eq!(js[1]["b"], json!(0.25));
    }
}
