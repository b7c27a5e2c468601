use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant of every template.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A unit-norm feature vector: an enrolled impression or a generated print.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Template(Vec<f64>);

impl Template {
    /// Normalizes `v`; fails on a zero (or non-finite) vector.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let norm = norm(&v);
        if !norm.is_finite() || norm <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateOutput);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Template(v))
    }

    /// Wraps a vector that must already be unit norm.
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Malformed(format!("template norm {n} is not 1")));
        }
        Ok(Template(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl std::ops::Neg for &Template {
    type Output = Template;

    fn neg(self) -> Template {
        Template(self.0.iter().map(|x| -x).collect())
    }
}

/// Dot product with four independent accumulators so the inner loop
/// vectorizes; summation order is fixed, so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
