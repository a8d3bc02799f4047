//! Row-major JSON encoding for `DMatrix<f64>`.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    Shape {
        nrows: m.nrows(),
        ncols: m.ncols(),
        rows,
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let shape = Shape::deserialize(d)?;
    if shape.rows.len() != shape.nrows || shape.rows.iter().any(|r| r.len() != shape.ncols) {
        return Err(D::Error::custom("matrix rows do not match declared shape"));
    }
    Ok(DMatrix::from_fn(shape.nrows, shape.ncols, |i, j| {
        shape.rows[i][j]
    }))
}

#[derive(Serialize, Deserialize)]
struct Shape {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<f64>>,
}
