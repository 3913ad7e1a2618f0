//! CSV ingestion and export.
//!
//! Input files have one header row and numeric cells only. Missing or
//! non-numeric cells are rejected with the offending line and column; there
//! is no imputation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scm::Dataset;
use crate::simulation::SimulationRecord;

/// Column selector: a header name, or a zero-based index when no header has
/// that exact name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Name(n) => write!(f, "{n}"),
            ColumnRef::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// Numeric table, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn resolve(&self, col: &ColumnRef) -> Result<usize> {
        let by_name = |name: &str| self.headers.iter().position(|h| h == name);
        match col {
            ColumnRef::Name(name) => by_name(name),
            ColumnRef::Index(i) => by_name(&i.to_string()).or((*i < self.headers.len()).then_some(*i)),
        }
        .ok_or_else(|| Error::invalid(format!("column {col} not found")))
    }

    pub fn column(&self, col: &ColumnRef) -> Result<&[f64]> {
        Ok(&self.columns[self.resolve(col)?])
    }

    /// Builds a dataset with `target` as `Y`, the optional `confounder` as
    /// `Z`, and every other column not listed in `drop` as a predictor.
    pub fn to_dataset(&self, target: &ColumnRef, drop: &[ColumnRef], confounder: Option<&ColumnRef>) -> Result<Dataset> {
        let t = self.resolve(target)?;
        let z = confounder.map(|c| self.resolve(c)).transpose()?;
        let mut excluded = vec![t];
        excluded.extend(z);
        for c in drop {
            excluded.push(self.resolve(c)?);
        }
        let predictors: Vec<usize> = (0..self.headers.len()).filter(|j| !excluded.contains(j)).collect();
        if predictors.is_empty() {
            return Err(Error::invalid("no predictor columns left"));
        }
        let n = self.rows();
        let x = DMatrix::from_fn(n, predictors.len(), |i, j| self.columns[predictors[j]][i]);
        let y = DVector::from_column_slice(&self.columns[t]);
        let zv = z.map(|j| DVector::from_column_slice(&self.columns[j]));
        let names = predictors.iter().map(|&j| self.headers[j].clone()).collect();
        Dataset::with_names(x, y, zv, names)
    }
}

pub fn parse_table<R: Read>(reader: R, delimiter: u8) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim_matches('"').to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::invalid("CSV has no header"));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        for (j, cell) in rec.iter().enumerate() {
            let value = parse_cell(cell).ok_or_else(|| Error::Parse {
                row: line,
                col: headers[j].clone(),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("`{cell}` is not a number")
                },
            })?;
            columns[j].push(value);
        }
    }
    Ok(CsvTable { headers, columns })
}

fn parse_cell(cell: &str) -> Option<f64> {
    let v: f64 = cell.parse().ok()?;
    v.is_finite().then_some(v)
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse { row: line, col: "-".into(), message: e.to_string() }
}

pub fn read_table(path: &Path, delimiter: u8) -> Result<CsvTable> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_table(file, delimiter)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

/// Writes `X` columns under their names, then `y`, then `z` when present.
/// Floats are written in shortest round-trip form.
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.names().to_vec();
    header.push("y".into());
    if ds.z().is_some() {
        header.push("z".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.x().row(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.y()[i].to_string());
        if let Some(z) = ds.z() {
            row.push(z[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset(ds, file).map_err(|e| csv_io(path, e))
}

pub fn write_records<W: Write>(records: &[SimulationRecord], writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_records(records: &[SimulationRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_records(records, file).map_err(|e| csv_io(path, e))
}

pub fn read_records<R: Read>(reader: R) -> std::result::Result<Vec<SimulationRecord>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
