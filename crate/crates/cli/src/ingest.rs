//! CSV ingestion: header row, numeric cells, one response column.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nlselect_core::{Dataset, Standardization};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: u64, reason: String },
    #[error("response column '{0}' not found in header")]
    MissingColumn(String),
    #[error("zero-variance columns: {}", .0.join(", "))]
    ZeroVarianceColumn(Vec<String>),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// A standardized dataset with the names of its design columns.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub columns: Vec<String>,
    pub response: String,
    pub transform: Standardization,
}

pub fn ingest_csv(path: impl AsRef<Path>, response_column: &str) -> Result<Ingested, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(file, response_column)
}

pub fn ingest_reader(reader: impl std::io::Read, response_column: &str) -> Result<Ingested, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let malformed = |e: csv::Error| IngestError::MalformedCsv {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    };
    let header: Vec<String> = rdr.headers().map_err(malformed)?.iter().map(str::to_string).collect();
    let response_at = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| IngestError::MissingColumn(response_column.to_string()))?;
    if header.len() < 2 {
        return Err(IngestError::Invalid("need at least one covariate column".into()));
    }
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != response_at)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(malformed)?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| IngestError::MalformedCsv {
                line,
                reason: format!("column '{}' has non-numeric value '{cell}'", header[j]),
            })?;
            if !v.is_finite() {
                return Err(IngestError::MalformedCsv {
                    line,
                    reason: format!("column '{}' has non-finite value '{cell}'", header[j]),
                });
            }
            if j == response_at {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let p = columns.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    let y = DVector::from_vec(ys);
    let (dataset, transform) = Dataset::standardize_with_transform(x, y).map_err(|e| match e {
        nlselect_core::Error::ZeroVarianceColumns(idx) => {
            IngestError::ZeroVarianceColumn(idx.into_iter().map(|j| columns[j].clone()).collect())
        }
        other => IngestError::Invalid(other.to_string()),
    })?;
    Ok(Ingested {
        dataset,
        columns,
        response: response_column.to_string(),
        transform,
    })
}

/// Writes the (already transformed) design and response back out, response last.
pub fn write_dataset_csv(writer: impl Write, data: &Ingested) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = data.columns.clone();
    header.push(data.response.clone());
    w.write_record(&header)?;
    let (x, y) = (data.dataset.x(), data.dataset.y());
    for i in 0..data.dataset.n() {
        let mut row: Vec<String> = (0..x.ncols()).map(|j| format!("{:?}", x[(i, j)])).collect();
        row.push(format!("{:?}", y[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
