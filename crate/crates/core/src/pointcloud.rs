use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// `n x dim` row-major real coordinates. `n` may be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} values cannot form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| {
            Error::InvalidInput("cannot infer dimension of an empty row list".into())
        })?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::InvalidInput("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row dimension");
        self.data.extend_from_slice(row);
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Columns `start..end` of every row.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.dim, "column range");
        let mut data = Vec::with_capacity(self.len() * (end - start));
        for r in self.rows() {
            data.extend_from_slice(&r[start..end]);
        }
        Self {
            dim: end - start,
            data,
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::matrix(self.len(), self.dim, self.data.clone())?)
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            dim: t.cols(),
            data: t.data().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_keeps_dimension() {
        let c = PointCloud::empty(3);
        assert_eq!((c.len(), c.dim()), (0, 3));
        assert!(c.is_empty());
    }

    #[test]
    fn select_and_columns() {
        let c = PointCloud::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(c.select(&[1, 1]).data(), &[4.0, 5.0, 6.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.columns(1, 3).data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn rejects_ragged_data() {
        assert!(PointCloud::new(3, vec![0.0; 4]).is_err());
    }
}
