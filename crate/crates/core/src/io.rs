//! Plain numeric CSV for matrices, vectors and MAM problems.
//!
//! Matrices are written without a header, one row per record. Readers
//! accept an optional non-numeric header line.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mam::MamProblem;

fn parse_records<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Config(format!("line {}: {e}", line + 1))),
        }
    }
    Ok(rows)
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::dim(format!("row {} has a different length", i + 1)));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<Matrix> {
    rows_to_matrix(&parse_records(input)?)
}

pub fn write_matrix_csv<W: Write>(m: &Matrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Column vector, one value per line (or a single `n x 1` matrix).
pub fn read_vector_csv<R: Read>(input: R) -> Result<Vector> {
    let m = read_matrix_csv(input)?;
    match m.shape() {
        (n, 1) => Ok(Vector::from_iterator(n, m.iter().copied())),
        (1, k) => Ok(Vector::from_iterator(k, m.iter().copied())),
        (0, _) => Ok(Vector::zeros(0)),
        s => Err(Error::dim(format!(
            "expected a vector, found a {s:?} matrix"
        ))),
    }
}

pub fn write_vector_csv<W: Write>(v: &Vector, out: W) -> Result<()> {
    write_matrix_csv(&Matrix::from_column_slice(v.len(), 1, v.as_slice()), out)
}

/// First record `theta_hat`, then one record per row of `Z_hat`.
pub fn write_mam_csv<W: Write>(prob: &MamProblem, out: W) -> Result<()> {
    let mut stacked = Matrix::zeros(prob.n() + 1, prob.p());
    stacked
        .row_mut(0)
        .copy_from_slice(prob.theta_hat().as_slice());
    stacked.rows_mut(1, prob.n()).copy_from(prob.influence());
    write_matrix_csv(&stacked, out)
}

pub fn read_mam_csv<R: Read>(input: R) -> Result<MamProblem> {
    let m = read_matrix_csv(input)?;
    if m.nrows() < 3 {
        return Err(Error::dim(
            "a MAM file needs theta_hat and at least two rows of Z_hat",
        ));
    }
    let theta = m.row(0).transpose();
    MamProblem::new(theta, m.rows(1, m.nrows() - 1).into_owned())
}

pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    read_matrix_csv(File::open(path)?)
}

pub fn read_vector_file(path: &Path) -> Result<Vector> {
    read_vector_csv(File::open(path)?)
}

pub fn read_mam_file(path: &Path) -> Result<MamProblem> {
    read_mam_csv(File::open(path)?)
}
