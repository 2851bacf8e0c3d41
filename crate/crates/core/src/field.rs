//! Nodal P1 coefficient vectors.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One real value per mesh vertex, tagged with the refinement level of the
/// mesh it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    values: Vec<f64>,
    level: usize,
}

/// Discrete state `u_hg`.
pub type StateField = NodalField;
/// Discrete distributed control `g`.
pub type ControlField = NodalField;

impl NodalField {
    pub fn new(values: Vec<f64>, level: usize) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "nodal value {} at vertex {i}",
                values[i]
            )));
        }
        Ok(Self { values, level })
    }

    pub fn zeros(n: usize, level: usize) -> Self {
        Self { values: vec![0.0; n], level }
    }

    pub fn constant(n: usize, value: f64, level: usize) -> Result<Self> {
        Self::new(vec![value; n], level)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `a * self + b * other`, entrywise.
    pub fn combine(&self, a: f64, other: &NodalField, b: f64) -> Result<NodalField> {
        crate::error::check_len(self.len(), other.len())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        NodalField::new(values, self.level)
    }

    pub fn scaled(&self, a: f64) -> NodalField {
        NodalField {
            values: self.values.iter().map(|x| a * x).collect(),
            level: self.level,
        }
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for NodalField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            NodalField::new(vec![0.0, f64::NAN], 0),
            Err(Error::NumericDomain(_))
        ));
        assert!(NodalField::new(vec![1.0, f64::INFINITY], 0).is_err());
    }

    #[test]
    fn combine_checks_length() {
        let a = NodalField::zeros(3, 0);
        let b = NodalField::zeros(4, 0);
        assert_eq!(
            a.combine(1.0, &b, 1.0),
            Err(Error::DimensionMismatch { expected: 3, found: 4 })
        );
    }
}
