//! Row-major nested-array representation of matrices for JSON documents.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds an `nrows × ncols` matrix; `ncols` is needed when there are rows but no columns.
pub fn from_rows(rows: &[Vec<f64>], ncols: Option<usize>, what: &str) -> Result<DMatrix<f64>> {
    let nc = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nc {
            return Err(Error::Dimension(format!(
                "{what}: row {i} has {} entries, expected {nc}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}
