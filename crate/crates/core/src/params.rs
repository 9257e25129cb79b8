//! The `d × n` parameter matrix: column `i` holds device `i`'s model.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix(Array2<f64>);

impl ParamMatrix {
    pub fn new(entries: Array2<f64>) -> Self {
        Self(entries)
    }

    /// Every device starts from the same `x0`.
    pub fn replicated(x0: &[f64], n: usize) -> Self {
        let d = x0.len();
        Self(Array2::from_shape_fn((d, n), |(r, _)| x0[r]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn devices(&self) -> usize {
        self.0.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn entries_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.column(i)
    }

    /// Global average model `x̄`.
    pub fn average(&self) -> Array1<f64> {
        self.0.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(self.dim()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub(crate) fn expect_devices(&self, n: usize) -> Result<()> {
        if self.devices() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.devices(),
            });
        }
        Ok(())
    }
}

impl From<Array2<f64>> for ParamMatrix {
    fn from(entries: Array2<f64>) -> Self {
        Self(entries)
    }
}
