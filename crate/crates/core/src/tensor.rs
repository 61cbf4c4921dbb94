//! Dense row-major token embeddings and the mean-pooling primitive shared by
//! the correspondence field and the video quadtree.

use crate::error::{Error, Result};

/// Row-major `rows x dim` matrix of finite `f32` token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dim", "embedding dimensionality must be >= 1"));
        }
        if values.len() != rows * dim {
            return Err(Error::input(
                "values",
                format!(
                    "expected {} values for {rows}x{dim}, got {}",
                    rows * dim,
                    values.len()
                ),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(
                "values",
                format!("non-finite value at row {} column {}", pos / dim, pos % dim),
            ));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    /// Builds a matrix from row slices; every row must have length `dim`.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::input(
                    "rows",
                    format!("row {i} has length {}, expected {dim}", r.len()),
                ));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Copies the contiguous row range `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: end - start,
            dim: self.dim,
            values: self.values[start * self.dim..end * self.dim].to_vec(),
        }
    }
}

/// Arithmetic mean of a set of vectors, accumulated in double precision.
///
/// Returns the zero vector for an empty set.
pub fn mean_pool<'a, I>(dim: usize, vectors: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += f64::from(*x);
        }
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

pub(crate) fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn rejects_length_mismatch_and_zero_dim() {
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmbeddingMatrix::new(0, 0, vec![]).is_err());
        assert_eq!(EmbeddingMatrix::empty(4).unwrap().rows(), 0);
    }

    #[test]
    fn mean_of_two_axes() {
        let m = mean_pool(2, [&[1.0f32, 0.0][..], &[0.0, 1.0][..]]);
        assert_eq!(m, vec![0.5, 0.5]);
    }

    #[test]
    fn slice_rows_copies_range() {
        let m = EmbeddingMatrix::from_rows(1, &[[1.0f32], [2.0], [3.0]]).unwrap();
        let s = m.slice_rows(1, 3);
        assert_eq!(s.values(), &[2.0, 3.0]);
    }
}
