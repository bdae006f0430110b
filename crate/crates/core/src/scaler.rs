//! Quantile scaling to a standard normal.
//!
//! Each feature is mapped through its training empirical CDF,
//! `F(x_(i)) = i / (n + 1)` with tied values sharing their average rank,
//! linearly interpolated between distinct training values and clipped to
//! `[1/(n+1), n/(n+1)]`, and then through the standard normal quantile.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoreError, Result};

fn std_normal() -> Normal {
    Normal::standard()
}

/// Transform for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Distinct training values, ascending. Empty for a pass-through feature.
    support: Vec<f64>,
    /// Empirical CDF at each support value.
    cdf: Vec<f64>,
}

impl QuantileTransform {
    /// Fit on training values. Fewer than two distinct values gives the
    /// identity transform.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Domain("non-finite training value".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut support = Vec::new();
        let mut cdf = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // ranks i+1..=j+1 averaged
            let rank = (i + j + 2) as f64 / 2.0;
            support.push(sorted[i]);
            cdf.push(rank / (n + 1) as f64);
            i = j + 1;
        }
        if support.len() < 2 {
            return Ok(Self::identity());
        }
        Ok(Self { support, cdf })
    }

    pub fn identity() -> Self {
        Self {
            support: Vec::new(),
            cdf: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.support.is_empty()
    }

    fn bounds(&self) -> (f64, f64) {
        // equals [1/(n+1), n/(n+1)] unless the extremes are tied
        (self.cdf[0], *self.cdf.last().unwrap())
    }

    /// Empirical CDF, interpolated and clipped.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let s = &self.support;
        if x <= s[0] {
            return lo;
        }
        if x >= *s.last().unwrap() {
            return hi;
        }
        let k = s.partition_point(|v| *v <= x);
        let (x0, x1) = (s[k - 1], s[k]);
        let (f0, f1) = (self.cdf[k - 1], self.cdf[k]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }

    pub fn transform(&self, x: f64) -> f64 {
        if self.is_identity() {
            return x;
        }
        std_normal().inverse_cdf(self.cdf(x))
    }

    /// Inverse map from the normal scale back to feature units.
    pub fn inverse(&self, z: f64) -> f64 {
        if self.is_identity() {
            return z;
        }
        let u = std_normal().cdf(z);
        let (lo, hi) = self.bounds();
        let s = &self.support;
        if u <= lo {
            return s[0];
        }
        if u >= hi {
            return *s.last().unwrap();
        }
        let k = self.cdf.partition_point(|f| *f <= u);
        let (f0, f1) = (self.cdf[k - 1], self.cdf[k]);
        let (x0, x1) = (s[k - 1], s[k]);
        x0 + (x1 - x0) * (u - f0) / (f1 - f0)
    }
}

/// Column-wise quantile scaler for row-major feature matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileScaler {
    pub columns: Vec<QuantileTransform>,
}

impl QuantileScaler {
    /// Fit on training rows; all rows must have the same width.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| CoreError::Empty("no training rows for scaler".into()))?;
        let mut columns = Vec::with_capacity(width);
        for j in 0..width {
            let mut col = Vec::with_capacity(rows.len());
            for r in rows {
                if r.len() != width {
                    return Err(CoreError::DimensionMismatch {
                        expected: width,
                        actual: r.len(),
                    });
                }
                col.push(r[j]);
            }
            let t = QuantileTransform::fit(&col)?;
            if t.is_identity() {
                log::warn!("feature {j} is constant on the training rows; passing it through");
            }
            columns.push(t);
        }
        Ok(Self { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(CoreError::DimensionMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(row.iter().zip(&self.columns).map(|(x, t)| t.transform(*x)).collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(CoreError::DimensionMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(row.iter().zip(&self.columns).map(|(z, t)| t.inverse(*z)).collect())
    }
}
