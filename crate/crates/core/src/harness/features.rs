//! Feature-file ingestion.
//!
//! CSV: a header row naming feature columns `f0..f{d-1}` and optionally a
//! `label` column with integer values. Error locations count data rows from 1
//! (the header is row 0) and columns from 1.
//!
//! Packed binary (all integers little-endian):
//!
//! | offset        | size      | content                         |
//! |---------------|-----------|---------------------------------|
//! | 0             | 4         | magic `PILR`                    |
//! | 4             | 2         | format version (u16, = 1)       |
//! | 6             | 4         | dimension d (u32)               |
//! | 10            | 8         | row count n (u64)               |
//! | 18            | 4·n·d     | row-major f32 features          |
//! | 18 + 4·n·d    | n or 0    | optional i8 labels              |
//!
//! Label presence is decided by the trailing byte count, which must be
//! exactly 0 or n.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_flat, Label, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PILR";
pub const PACKED_VERSION: u16 = 1;
const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    Csv,
    PackedBinary,
}

impl FeatureFormat {
    /// `.csv` is CSV; anything else is packed binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::PackedBinary,
        }
    }
}

/// Raw feature rows, before normalization, with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Option<Vec<i64>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.values.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Distinct labels with their counts.
    pub fn class_counts(&self) -> BTreeMap<i64, usize> {
        let mut m = BTreeMap::new();
        for l in self.labels.iter().flatten() {
            *m.entry(*l).or_insert(0) += 1;
        }
        m
    }

    /// Binary task on classes `positive` vs `negative`; other rows are dropped.
    pub fn one_vs_one(&self, positive: i64, negative: i64) -> Result<LabeledDataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidData("feature table has no labels".into()))?;
        if positive == negative {
            return Err(Error::InvalidData("one-vs-one needs two different classes".into()));
        }
        let mut values = Vec::new();
        let mut out = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let y = if *l == positive {
                Label::POS
            } else if *l == negative {
                Label::NEG
            } else {
                continue;
            };
            values.extend_from_slice(self.row(i));
            out.push(y);
        }
        if out.is_empty() {
            return Err(Error::EmptyDataset(format!("no rows with label {positive} or {negative}")));
        }
        normalize_flat(self.dim, &mut values)?;
        LabeledDataset::from_flat(self.dim, values, out)
    }

    /// Normalized points with ±1 labels.
    pub fn to_labeled(&self) -> Result<LabeledDataset> {
        let raw = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidData("feature table has no labels".into()))?;
        let labels = raw
            .iter()
            .enumerate()
            .map(|(i, l)| Label::from_int(*l).ok_or(Error::UnknownLabel { row: i + 1, label: *l }))
            .collect::<Result<Vec<_>>>()?;
        let mut values = self.values.clone();
        normalize_flat(self.dim, &mut values)?;
        LabeledDataset::from_flat(self.dim, values, labels)
    }

    /// Normalized points, ignoring any labels.
    pub fn to_unlabeled(&self) -> Result<UnlabeledDataset> {
        let mut values = self.values.clone();
        normalize_flat(self.dim, &mut values)?;
        UnlabeledDataset::from_flat(self.dim, values)
    }
}

/// Contents of a feature file after normalization to the unit sphere.
#[derive(Debug, Clone)]
pub enum Features {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Labeled(d) => d.len(),
            Features::Unlabeled(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Labeled(d) => d.dim(),
            Features::Unlabeled(d) => d.dim(),
        }
    }
}

/// Loads a feature file and normalizes every row to unit norm. Labels, when
/// present, must be ±1; use [`read_feature_table`] for multiclass files.
pub fn load_features(path: &Path, format: FeatureFormat) -> Result<Features> {
    let table = read_feature_table(path, format)?;
    if table.labels.is_some() {
        Ok(Features::Labeled(table.to_labeled()?))
    } else {
        Ok(Features::Unlabeled(table.to_unlabeled()?))
    }
}

pub fn read_feature_table(path: &Path, format: FeatureFormat) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let table = match format {
        FeatureFormat::Csv => read_csv(reader)?,
        FeatureFormat::PackedBinary => read_packed(reader).map_err(|e| match e {
            PackedError::Io(e) => Error::io(path, e),
            PackedError::Data(e) => e,
        })?,
    };
    if table.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    Ok(table)
}

pub fn write_feature_table(table: &FeatureTable, path: &Path, format: FeatureFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FeatureFormat::Csv => write_csv(table, &mut w).map_err(|e| match e {
            PackedError::Io(e) => Error::io(path, e),
            PackedError::Data(e) => e,
        })?,
        FeatureFormat::PackedBinary => write_packed(table, &mut w).map_err(|e| match e {
            PackedError::Io(e) => Error::io(path, e),
            PackedError::Data(e) => e,
        })?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

enum PackedError {
    Io(std::io::Error),
    Data(Error),
}

impl From<std::io::Error> for PackedError {
    fn from(e: std::io::Error) -> Self {
        PackedError::Io(e)
    }
}

impl From<Error> for PackedError {
    fn from(e: Error) -> Self {
        PackedError::Data(e)
    }
}

fn read_csv<R: Read>(reader: R) -> Result<FeatureTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            col: 0,
            msg: e.to_string(),
        })?
        .clone();
    let mut label_col = None;
    // position in the file -> feature index
    let mut feature_of_col = vec![usize::MAX; header.len()];
    let mut seen = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if name == "label" {
            if label_col.replace(c).is_some() {
                return Err(Error::Parse {
                    row: 0,
                    col: c + 1,
                    msg: "duplicate label column".into(),
                });
            }
            continue;
        }
        let idx = name
            .strip_prefix('f')
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                row: 0,
                col: c + 1,
                msg: format!("unexpected column name {name:?}"),
            })?;
        feature_of_col[c] = idx;
        seen.push(idx);
    }
    let dim = seen.len();
    seen.sort_unstable();
    if dim == 0 || seen.iter().enumerate().any(|(i, v)| i != *v) {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: "feature columns must be named f0..f{d-1}".into(),
        });
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    let mut row_buf = vec![0.0; dim];
    for (i, rec) in r.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => Error::InconsistentWidth {
                row: line,
                expected: width,
                found: *len as usize,
            },
            _ => Error::Parse {
                row: line,
                col: 0,
                msg: e.to_string(),
            },
        })?;
        for (c, field) in rec.iter().enumerate() {
            if Some(c) == label_col {
                let l = parse_label(field).ok_or_else(|| Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("bad label {field:?}"),
                })?;
                labels.as_mut().expect("label column").push(l);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("bad number {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: line,
                        col: c + 1,
                        msg: format!("non-finite value {field:?}"),
                    });
                }
                row_buf[feature_of_col[c]] = v;
            }
        }
        values.extend_from_slice(&row_buf);
    }
    Ok(FeatureTable { dim, values, labels })
}

fn parse_label(s: &str) -> Option<i64> {
    s.strip_prefix('+').unwrap_or(s).parse().ok()
}

fn write_csv<W: Write>(table: &FeatureTable, out: W) -> std::result::Result<(), PackedError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..table.dim).map(|i| format!("f{i}")).collect();
    if table.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_to_io)?;
    for i in 0..table.len() {
        let mut rec: Vec<String> = table.row(i).iter().map(|v| format!("{v}")).collect();
        if let Some(l) = &table.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(csv_to_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

fn read_packed<R: Read>(mut reader: R) -> std::result::Result<FeatureTable, PackedError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            PackedError::Data(Error::Parse {
                row: 0,
                col: 0,
                msg: "file shorter than the packed header".into(),
            })
        } else {
            PackedError::Io(e)
        }
    })?;
    if &header[..4] != MAGIC {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: "missing PILR magic".into(),
        }
        .into());
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != PACKED_VERSION {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("unsupported packed version {version}"),
        }
        .into());
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(header[10..18].try_into().expect("8 bytes")) as usize;
    if dim == 0 {
        return Err(Error::InvalidData("packed file declares dimension 0".into()).into());
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    let body = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::InvalidData("packed header sizes overflow".into()))?;
    if rest.len() < body {
        return Err(Error::Parse {
            row: rest.len() / (4 * dim) + 1,
            col: 0,
            msg: format!("truncated body: {} of {body} feature bytes", rest.len()),
        }
        .into());
    }
    let trailing = rest.len() - body;
    if trailing != 0 && trailing != n {
        return Err(Error::InvalidData(format!(
            "expected 0 or {n} label bytes after the features, found {trailing}"
        ))
        .into());
    }
    let mut values = Vec::with_capacity(n * dim);
    for (i, chunk) in rest[..body].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Parse {
                row: i / dim + 1,
                col: i % dim + 1,
                msg: "non-finite value".into(),
            }
            .into());
        }
        values.push(v as f64);
    }
    let labels = (trailing == n && n > 0).then(|| rest[body..].iter().map(|b| *b as i8 as i64).collect());
    Ok(FeatureTable { dim, values, labels })
}

fn write_packed<W: Write>(table: &FeatureTable, mut out: W) -> std::result::Result<(), PackedError> {
    let n = table.len();
    out.write_all(MAGIC)?;
    out.write_all(&PACKED_VERSION.to_le_bytes())?;
    let dim = u32::try_from(table.dim).map_err(|_| Error::InvalidData("dimension exceeds u32".into()))?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&(n as u64).to_le_bytes())?;
    for v in &table.values {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    if let Some(labels) = &table.labels {
        for (i, l) in labels.iter().enumerate() {
            let b = i8::try_from(*l).map_err(|_| Error::UnknownLabel { row: i + 1, label: *l })?;
            out.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

impl From<&LabeledDataset> for FeatureTable {
    fn from(d: &LabeledDataset) -> Self {
        FeatureTable {
            dim: d.dim(),
            values: d.points().as_flat().to_vec(),
            labels: Some(d.labels().iter().map(|l| l.value() as i64).collect()),
        }
    }
}

impl From<&UnlabeledDataset> for FeatureTable {
    fn from(d: &UnlabeledDataset) -> Self {
        FeatureTable {
            dim: d.dim(),
            values: d.points().as_flat().to_vec(),
            labels: None,
        }
    }
}
