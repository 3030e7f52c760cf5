//! Coordinate addressing and the tagged payload stored at each coordinate.

use nalgebra::{DMatrix, DVector};
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::{approx_f64, Scalar};

/// Index of one full-conditional block of a target model.
///
/// Identifiers are dense: a model with `p` full conditionals uses `0..p-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoordinateId(pub usize);

impl fmt::Display for CoordinateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Shape of the payload held at a coordinate, fixed for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

/// Payload of one coordinate: a scalar, a dense vector, or a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<T: Scalar> {
    Scalar(T),
    Vector(DVector<T>),
    Matrix(DMatrix<T>),
}

impl<T: Scalar> Value<T> {
    pub fn shape(&self) -> ValueShape {
        match self {
            Value::Scalar(_) => ValueShape::Scalar,
            Value::Vector(v) => ValueShape::Vector(v.len()),
            Value::Matrix(m) => ValueShape::Matrix(m.nrows(), m.ncols()),
        }
    }

    /// Number of scalar entries.
    pub fn flat_len(&self) -> usize {
        match self {
            Value::Scalar(_) => 1,
            Value::Vector(v) => v.len(),
            Value::Matrix(m) => m.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Scalar(x) => x.is_finite(),
            Value::Vector(v) => v.iter().all(|x| x.is_finite()),
            Value::Matrix(m) => m.iter().all(|x| x.is_finite()),
        }
    }

    /// Largest absolute entry.
    pub fn inf_norm(&self) -> T {
        let fold = |acc: T, x: &T| acc.max(x.abs());
        match self {
            Value::Scalar(x) => x.abs(),
            Value::Vector(v) => v.iter().fold(T::zero(), fold),
            Value::Matrix(m) => m.iter().fold(T::zero(), fold),
        }
    }

    pub fn as_scalar(&self, coord: CoordinateId) -> Result<T> {
        match self {
            Value::Scalar(x) => Ok(*x),
            other => Err(Error::ShapeMismatch {
                coord,
                expected: ValueShape::Scalar,
                got: other.shape(),
            }),
        }
    }

    pub fn as_vector(&self, coord: CoordinateId) -> Result<&DVector<T>> {
        match self {
            Value::Vector(v) => Ok(v),
            other => Err(Error::ShapeMismatch {
                coord,
                expected: ValueShape::Vector(0),
                got: other.shape(),
            }),
        }
    }

    pub fn as_matrix(&self, coord: CoordinateId) -> Result<&DMatrix<T>> {
        match self {
            Value::Matrix(m) => Ok(m),
            other => Err(Error::ShapeMismatch {
                coord,
                expected: ValueShape::Matrix(0, 0),
                got: other.shape(),
            }),
        }
    }

    /// Append the entries, converted to `f64`, onto `out` (column-major for
    /// matrices). Used for traces, moments, and summaries.
    pub fn extend_f64(&self, out: &mut Vec<f64>) {
        match self {
            Value::Scalar(x) => out.push(approx_f64(*x)),
            Value::Vector(v) => out.extend(v.iter().map(|x| approx_f64(*x))),
            Value::Matrix(m) => out.extend(m.iter().map(|x| approx_f64(*x))),
        }
    }
}
