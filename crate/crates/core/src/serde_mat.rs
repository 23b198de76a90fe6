//! Serde adapters for dense matrices.
//!
//! Matrices are written row by row as nested JSON arrays. Complex entries are
//! `[re, im]` pairs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn rows_of<T: Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows<T, E>(rows: Vec<Vec<T>>, cols_hint: Option<usize>) -> Result<DMatrix<T>, E>
where
    T: nalgebra::Scalar + Copy,
    E: serde::de::Error,
{
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).or(cols_hint).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(E::custom("ragged matrix rows"));
    }
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

/// Real matrices as `[[..], ..]`. Empty matrices carry an explicit shape.
pub mod real {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Rows(Vec<Vec<f64>>),
        Empty { rows: usize, cols: usize },
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        if m.is_empty() {
            Repr::Empty { rows: m.nrows(), cols: m.ncols() }.serialize(s)
        } else {
            Repr::Rows(rows_of(m)).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Rows(rows) => from_rows(rows, None),
            Repr::Empty { rows, cols } => Ok(DMatrix::zeros(rows, cols)),
        }
    }
}

/// Complex matrices as `[[[re, im], ..], ..]`. Empty matrices carry an explicit shape.
pub mod complex {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Rows(Vec<Vec<[f64; 2]>>),
        Empty { rows: usize, cols: usize },
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<Complex64>, s: S) -> Result<S::Ok, S::Error> {
        if m.is_empty() {
            return Repr::Empty { rows: m.nrows(), cols: m.ncols() }.serialize(s);
        }
        let rows = rows_of(m)
            .into_iter()
            .map(|r| r.into_iter().map(|z| [z.re, z.im]).collect())
            .collect();
        Repr::Rows(rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<Complex64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Rows(rows) => {
                let rows = rows
                    .into_iter()
                    .map(|r| r.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
                    .collect();
                from_rows(rows, None)
            }
            Repr::Empty { rows, cols } => Ok(DMatrix::zeros(rows, cols)),
        }
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(D::Error::custom("non-finite vector entry"));
        }
        Ok(DVector::from_vec(v))
    }
}
