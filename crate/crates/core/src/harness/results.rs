//! Result rows and their CSV / JSON-lines serialization.
//!
//! Both formats start with a schema-version line, keep a fixed column order,
//! and print floats rounded to six significant digits. Infinite values are
//! written as `inf`; missing values as an empty CSV cell or JSON `null`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 21] = [
    "dataset",
    "method",
    "backend",
    "k",
    "epsilon",
    "delta",
    "n_labeled",
    "n_public",
    "seed",
    "formula_variant",
    "budget_split",
    "learning_rate",
    "steps",
    "batch_size",
    "test_error",
    "train_error",
    "wall_time_ms",
    "sigma",
    "xi_hat",
    "delta_k_hat",
    "error_tag",
];

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub backend: String,
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub n_labeled: usize,
    pub n_public: usize,
    pub seed: u64,
    pub formula_variant: String,
    pub budget_split: String,
    pub learning_rate: Option<f64>,
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub test_error: Option<f64>,
    pub train_error: Option<f64>,
    pub wall_time_ms: f64,
    /// Noise multiplier (DP-SGD) or per-step variance (noisy SGD).
    pub sigma: Option<f64>,
    pub xi_hat: Option<f64>,
    pub delta_k_hat: Option<f64>,
    /// Failure description for cells that did not complete.
    pub error_tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultFormat {
    #[default]
    Csv,
    JsonLines,
}

impl ResultFormat {
    /// `.jsonl` / `.json` select JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => ResultFormat::JsonLines,
            _ => ResultFormat::Csv,
        }
    }
}

/// Rounds to six significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{}", round_sig6(v))
    }
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s.parse().map_err(|e| format!("bad float {s:?}: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Str(String),
    Int(u64),
    Float(f64),
    Null,
}

fn opt_f(v: Option<f64>) -> Cell {
    v.map_or(Cell::Null, Cell::Float)
}

fn opt_i(v: Option<u64>) -> Cell {
    v.map_or(Cell::Null, Cell::Int)
}

impl ResultRow {
    fn cells(&self) -> [Cell; 21] {
        [
            Cell::Str(self.dataset.clone()),
            Cell::Str(self.method.clone()),
            Cell::Str(self.backend.clone()),
            Cell::Int(self.k as u64),
            Cell::Float(self.epsilon),
            Cell::Float(self.delta),
            Cell::Int(self.n_labeled as u64),
            Cell::Int(self.n_public as u64),
            Cell::Int(self.seed),
            Cell::Str(self.formula_variant.clone()),
            Cell::Str(self.budget_split.clone()),
            opt_f(self.learning_rate),
            opt_i(self.steps),
            opt_i(self.batch_size.map(|b| b as u64)),
            opt_f(self.test_error),
            opt_f(self.train_error),
            Cell::Float(self.wall_time_ms),
            opt_f(self.sigma),
            opt_f(self.xi_hat),
            opt_f(self.delta_k_hat),
            self.error_tag.clone().map_or(Cell::Null, Cell::Str),
        ]
    }

    fn from_cells(cells: Vec<Cell>, row: usize) -> Result<Self> {
        let mut it = cells.into_iter().enumerate();
        let mut next = || it.next().expect("cell count checked by caller");
        let err = |col: usize, what: &str| Error::Parse {
            row,
            col,
            msg: format!("column {} expects {what}", COLUMNS[col]),
        };
        macro_rules! take {
            (str) => {{
                match next() {
                    (_, Cell::Str(s)) => s,
                    (_, Cell::Null) => String::new(),
                    (c, _) => return Err(err(c, "a string")),
                }
            }};
            (int) => {{
                match next() {
                    (_, Cell::Int(v)) => v,
                    (c, _) => return Err(err(c, "an integer")),
                }
            }};
            (float) => {{
                match next() {
                    (_, Cell::Float(v)) => v,
                    (_, Cell::Int(v)) => v as f64,
                    (c, _) => return Err(err(c, "a number")),
                }
            }};
            (opt_float) => {{
                match next() {
                    (_, Cell::Float(v)) => Some(v),
                    (_, Cell::Int(v)) => Some(v as f64),
                    (_, Cell::Null) => None,
                    (c, _) => return Err(err(c, "a number or nothing")),
                }
            }};
            (opt_int) => {{
                match next() {
                    (_, Cell::Int(v)) => Some(v),
                    (_, Cell::Null) => None,
                    (c, _) => return Err(err(c, "an integer or nothing")),
                }
            }};
            (opt_str) => {{
                match next() {
                    (_, Cell::Str(s)) => Some(s),
                    (_, Cell::Null) => None,
                    (c, _) => return Err(err(c, "a string or nothing")),
                }
            }};
        }
        Ok(ResultRow {
            dataset: take!(str),
            method: take!(str),
            backend: take!(str),
            k: take!(int) as usize,
            epsilon: take!(float),
            delta: take!(float),
            n_labeled: take!(int) as usize,
            n_public: take!(int) as usize,
            seed: take!(int),
            formula_variant: take!(str),
            budget_split: take!(str),
            learning_rate: take!(opt_float),
            steps: take!(opt_int),
            batch_size: take!(opt_int).map(|v| v as usize),
            test_error: take!(opt_float),
            train_error: take!(opt_float),
            wall_time_ms: take!(float),
            sigma: take!(opt_float),
            xi_hat: take!(opt_float),
            delta_k_hat: take!(opt_float),
            error_tag: take!(opt_str),
        })
    }

    /// The row as it reads back after a write: floats at six significant digits.
    pub fn rounded(&self) -> Self {
        let r = |v: Option<f64>| v.map(round_sig6);
        Self {
            epsilon: round_sig6(self.epsilon),
            delta: round_sig6(self.delta),
            learning_rate: r(self.learning_rate),
            test_error: r(self.test_error),
            train_error: r(self.train_error),
            wall_time_ms: round_sig6(self.wall_time_ms),
            sigma: r(self.sigma),
            xi_hat: r(self.xi_hat),
            delta_k_hat: r(self.delta_k_hat),
            ..self.clone()
        }
    }
}

// Column kinds, used to type CSV cells on read.
#[derive(Clone, Copy)]
enum Kind {
    Str,
    Int,
    Float,
}

const KINDS: [Kind; 21] = [
    Kind::Str,
    Kind::Str,
    Kind::Str,
    Kind::Int,
    Kind::Float,
    Kind::Float,
    Kind::Int,
    Kind::Int,
    Kind::Int,
    Kind::Str,
    Kind::Str,
    Kind::Float,
    Kind::Int,
    Kind::Int,
    Kind::Float,
    Kind::Float,
    Kind::Float,
    Kind::Float,
    Kind::Float,
    Kind::Float,
    Kind::Str,
];

fn csv_header_line() -> String {
    format!("# schema_version={SCHEMA_VERSION}")
}

fn json_header_line() -> String {
    format!("{{\"schema_version\":{SCHEMA_VERSION}}}")
}

fn cell_to_csv(c: &Cell) -> String {
    match c {
        Cell::Str(s) => s.clone(),
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => fmt_float(*v),
        Cell::Null => String::new(),
    }
}

fn cell_to_json(c: &Cell) -> Value {
    match c {
        Cell::Str(s) => Value::String(s.clone()),
        Cell::Int(v) => Value::from(*v),
        Cell::Float(v) if v.is_finite() => {
            serde_json::Number::from_f64(round_sig6(*v)).map_or(Value::Null, Value::Number)
        }
        Cell::Float(v) => Value::String(fmt_float(*v)),
        Cell::Null => Value::Null,
    }
}

/// Serializes rows to a writer.
pub fn write_results_to<W: Write>(rows: &[ResultRow], mut out: W, format: ResultFormat) -> std::io::Result<()> {
    match format {
        ResultFormat::Csv => {
            writeln!(out, "{}", csv_header_line())?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(COLUMNS)?;
            for row in rows {
                w.write_record(row.cells().iter().map(cell_to_csv))?;
            }
            w.flush()?;
        }
        ResultFormat::JsonLines => {
            writeln!(out, "{}", json_header_line())?;
            for row in rows {
                let mut m = Map::new();
                for (name, cell) in COLUMNS.iter().zip(row.cells().iter()) {
                    m.insert((*name).to_string(), cell_to_json(cell));
                }
                writeln!(out, "{}", Value::Object(m))?;
            }
        }
    }
    Ok(())
}

pub fn write_results(rows: &[ResultRow], path: &Path, format: ResultFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    write_results_to(rows, &mut buf, format).map_err(|e| Error::io(path, e))?;
    buf.flush().map_err(|e| Error::io(path, e))
}

fn parse_csv_cell(s: &str, kind: Kind, row: usize, col: usize) -> Result<Cell> {
    if s.is_empty() {
        return Ok(Cell::Null);
    }
    let bad = |msg: String| Error::Parse { row, col, msg };
    Ok(match kind {
        Kind::Str => Cell::Str(s.to_string()),
        Kind::Int => Cell::Int(s.parse().map_err(|e| bad(format!("bad integer {s:?}: {e}")))?),
        Kind::Float => Cell::Float(parse_float(s).map_err(bad)?),
    })
}

fn json_to_cell(v: &Value, kind: Kind, row: usize, col: usize) -> Result<Cell> {
    let bad = || Error::Parse {
        row,
        col,
        msg: format!("unexpected JSON value {v}"),
    };
    Ok(match (v, kind) {
        (Value::Null, _) => Cell::Null,
        (Value::String(s), Kind::Str) => Cell::Str(s.clone()),
        (Value::String(s), Kind::Float) => Cell::Float(parse_float(s).map_err(|_| bad())?),
        (Value::Number(n), Kind::Int) => Cell::Int(n.as_u64().ok_or_else(bad)?),
        (Value::Number(n), Kind::Float) => Cell::Float(n.as_f64().ok_or_else(bad)?),
        _ => return Err(bad()),
    })
}

/// Reads a file written by [`write_results`]; the format is detected from
/// the schema line.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let first = first.trim_end();
    if first == csv_header_line() {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers().map_err(|e| csv_error(e, 2))?.clone();
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::Parse {
                row: 2,
                col: 0,
                msg: "unexpected result columns".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 3;
            let rec = rec.map_err(|e| csv_error(e, line))?;
            let cells = rec
                .iter()
                .zip(KINDS)
                .enumerate()
                .map(|(c, (s, kind))| parse_csv_cell(s, kind, line, c))
                .collect::<Result<Vec<_>>>()?;
            rows.push(ResultRow::from_cells(cells, line)?);
        }
        Ok(rows)
    } else if first == json_header_line() {
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: n,
                col: 0,
                msg: e.to_string(),
            })?;
            let cells = COLUMNS
                .iter()
                .zip(KINDS)
                .enumerate()
                .map(|(c, (name, kind))| json_to_cell(v.get(*name).unwrap_or(&Value::Null), kind, n, c))
                .collect::<Result<Vec<_>>>()?;
            rows.push(ResultRow::from_cells(cells, n)?);
        }
        Ok(rows)
    } else {
        Err(Error::Parse {
            row: 1,
            col: 0,
            msg: format!("missing or unsupported schema line {first:?}"),
        })
    }
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    Error::Parse {
        row,
        col: 0,
        msg: e.to_string(),
    }
}
