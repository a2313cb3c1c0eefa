//! CSV ingestion.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("column not found: {0}")]
    MissingColumn(String),

    #[error("no numeric data in {0}")]
    NoNumericData(String),

    #[error("no rows left after dropping {dropped} with missing or non-finite values")]
    EmptyAfterFiltering { dropped: usize },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// A column given by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Header names win over positions, so a column literally named "3" is
    /// found by name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, headers: &[String]) -> Result<usize, DataError> {
        match self {
            ColumnRef::Name(name) => {
                headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.clone()))
            }
            ColumnRef::Index(i) => {
                let as_name = i.to_string();
                if let Some(pos) = headers.iter().position(|h| *h == as_name) {
                    return Ok(pos);
                }
                if *i < headers.len() {
                    Ok(*i)
                } else {
                    Err(DataError::MissingColumn(format!("#{i} (file has {} columns)", headers.len())))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub response_name: String,
    pub column_names: Vec<String>,
    /// File path, or "synthetic".
    pub source: String,
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Writes the response first, then the covariates. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.y[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headed CSV. Without `features`, every other column that holds at
/// least one number is a covariate. Rows with a missing, non-numeric or
/// non-finite value in any used column are dropped and counted.
pub fn load_dataset_csv(path: &Path, response: &ColumnRef, features: Option<&[ColumnRef]>) -> Result<Dataset, DataError> {
    if !path.is_file() {
        return Err(DataError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(File::open(path)?);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records = reader.records().collect::<Result<Vec<_>, _>>()?;

    let y_col = response.resolve(&headers)?;
    let has_number = |c: usize| records.iter().any(|r| r.get(c).and_then(parse_cell).is_some());
    if !has_number(y_col) {
        return Err(DataError::NoNumericData(format!("response column {}", headers[y_col])));
    }

    let x_cols: Vec<usize> = match features {
        Some(list) => {
            let cols = list.iter().map(|c| c.resolve(&headers)).collect::<Result<Vec<_>, _>>()?;
            if let Some(&c) = cols.iter().find(|&&c| !has_number(c)) {
                return Err(DataError::NoNumericData(format!("column {}", headers[c])));
            }
            cols
        }
        None => {
            let mut cols = Vec::new();
            for c in (0..headers.len()).filter(|&c| c != y_col) {
                if has_number(c) {
                    cols.push(c);
                } else {
                    log::warn!("skipping non-numeric column {}", headers[c]);
                }
            }
            cols
        }
    };
    if x_cols.is_empty() {
        return Err(DataError::NoNumericData("covariate columns".into()));
    }

    let mut y = Vec::with_capacity(records.len());
    let mut values = Vec::with_capacity(records.len() * x_cols.len());
    let mut dropped = 0;
    'rows: for rec in &records {
        let Some(yv) = rec.get(y_col).and_then(parse_cell) else {
            dropped += 1;
            continue;
        };
        let start = values.len();
        for &c in &x_cols {
            match rec.get(c).and_then(parse_cell) {
                Some(v) => values.push(v),
                None => {
                    values.truncate(start);
                    dropped += 1;
                    continue 'rows;
                }
            }
        }
        y.push(yv);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing or non-finite values");
    }
    if y.is_empty() {
        return Err(DataError::EmptyAfterFiltering { dropped });
    }

    Ok(Dataset {
        x: DMatrix::from_row_slice(y.len(), x_cols.len(), &values),
        y,
        response_name: headers[y_col].clone(),
        column_names: x_cols.iter().map(|&c| headers[c].clone()).collect(),
        source: path.display().to_string(),
        dropped_rows: dropped,
    })
}
