use crate::error::{Error, Result};

/// Shape of a dense value: scalar, vector, or row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    /// Rows/columns with vectors treated as a single row.
    pub fn rows(&self) -> usize {
        match *self {
            Shape::Scalar | Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Scalar => vec![],
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Shape> {
        match dims {
            [] => Ok(Shape::Scalar),
            [n] => Ok(Shape::Vector(*n)),
            [r, c] => Ok(Shape::Matrix(*r, *c)),
            _ => Err(Error::InvalidArgument(format!(
                "rank {} tensors are not supported",
                dims.len()
            ))),
        }
    }
}

/// How two operand shapes combine in an elementwise op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    Same,
    /// Left is scalar, broadcast over right.
    ScalarLeft,
    /// Right is scalar, broadcast over left.
    ScalarRight,
    /// Right is a vector matching the trailing (column) dimension of left.
    RowRight,
}

/// Resolves broadcasting between two shapes. Only scalar-vs-array and
/// trailing-dimension (row vector vs matrix) alignment are allowed.
pub fn broadcast(op: &'static str, a: Shape, b: Shape) -> Result<(Shape, Broadcast)> {
    if a == b {
        return Ok((a, Broadcast::Same));
    }
    match (a, b) {
        (Shape::Scalar, _) => Ok((b, Broadcast::ScalarLeft)),
        (_, Shape::Scalar) => Ok((a, Broadcast::ScalarRight)),
        (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => {
            Ok((Shape::Matrix(r, c), Broadcast::RowRight))
        }
        _ => Err(Error::ShapeMismatch {
            op,
            left: a.dims(),
            right: b.dims(),
        }),
    }
}
