//! Dense row-major tensors of rank 1 or 2.
//!
//! Scalars are represented as length-1 vectors, which lets every graph
//! primitive treat them uniformly (a scalar is just a vector you can
//! concatenate).

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Dense tensor: a shape of rank 1 (`[n]`) or 2 (`[rows, cols]`) plus
/// row-major data. `product(shape) == data.len()` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Rank-1 tensor from raw data.
    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from row-major data. Panics if the element count
    /// does not match `rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "matrix {rows}x{cols} needs {} elements, got {}",
            rows * cols,
            data.len()
        );
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Scalar as a length-1 vector.
    pub fn scalar(value: S) -> Self {
        Self::vector(vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    /// Build a matrix out of equal-length rows. Panics on ragged input
    /// or an empty row list.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows in from_rows");
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for any single-element tensor; the graph treats those as scalars.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has a shape")
    }

    pub fn at(&self, i: usize) -> S {
        self.data[i]
    }

    pub fn at2(&self, row: usize, col: usize) -> S {
        debug_assert!(self.is_matrix());
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[S] {
        debug_assert!(self.is_matrix());
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Single scalar value; panics if the tensor is not single-element.
    pub fn item(&self) -> S {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: S) {
        debug_assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + scale * *b;
        }
    }

    /// Largest absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_agree() {
        let t = Tensor::<f64>::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.at2(1, 2), 6.0);
        assert_eq!(t.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_is_unit_vector() {
        let s = Tensor::<f64>::scalar(4.5);
        assert!(s.is_scalar());
        assert!(s.is_vector());
        assert_eq!(s.item(), 4.5);
    }

    #[test]
    #[should_panic(expected = "needs")]
    fn matrix_element_count_checked() {
        let _ = Tensor::<f64>::matrix(2, 2, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let b = Tensor::<f64>::vector(vec![10.0, 20.0]);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.data(), &[6.0, 12.0]);
    }
}
