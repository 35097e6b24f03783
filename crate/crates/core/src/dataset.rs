use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};

/// Training inputs (one row per sample) and their noisy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(GpError::DimensionMismatch {
                context: "dataset rows vs targets",
                expected: inputs.nrows(),
                found: targets.len(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("dataset"));
        }
        Ok(Self { inputs, targets })
    }

    /// A dataset with no samples in `dim` dimensions.
    pub fn empty(dim: usize) -> Self {
        Self { inputs: DMatrix::zeros(0, dim), targets: DVector::zeros(0) }
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(GpError::InvalidArgument("ragged input rows".into()));
        }
        let inputs = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(inputs, DVector::from_column_slice(targets))
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.dim() != other.dim() {
            return Err(GpError::DimensionMismatch {
                context: "dataset concat",
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let n = self.len() + other.len();
        let inputs = DMatrix::from_fn(n, self.dim(), |i, j| {
            if i < self.len() { self.inputs[(i, j)] } else { other.inputs[(i - self.len(), j)] }
        });
        let targets = DVector::from_fn(n, |i, _| {
            if i < self.len() { self.targets[i] } else { other.targets[i - self.len()] }
        });
        Ok(Dataset { inputs, targets })
    }

    /// The last `count` samples (all of them if fewer are stored).
    pub fn tail(&self, count: usize) -> Dataset {
        let start = self.len().saturating_sub(count);
        Dataset {
            inputs: self.inputs.rows(start, self.len() - start).into_owned(),
            targets: self.targets.rows(start, self.len() - start).into_owned(),
        }
    }

    /// Samples `[start, start + count)`.
    pub fn slice(&self, start: usize, count: usize) -> Dataset {
        Dataset {
            inputs: self.inputs.rows(start, count).into_owned(),
            targets: self.targets.rows(start, count).into_owned(),
        }
    }
}
