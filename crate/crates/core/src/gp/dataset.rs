use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map from raw units to standardized (z-score) units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            feature_means: vec![0.0; dim],
            feature_stds: vec![1.0; dim],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Fits means and (population) standard deviations. Constant columns get
    /// a standard deviation of 1 and a logged warning.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(Error::invalid("cannot fit standardization on empty or mismatched data"));
        }
        let n = x.nrows() as f64;
        let mut feature_means = Vec::with_capacity(x.ncols());
        let mut feature_stds = Vec::with_capacity(x.ncols());
        for (d, col) in x.column_iter().enumerate() {
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            feature_means.push(m);
            feature_stds.push(if s > 0.0 && s.is_finite() {
                s
            } else {
                log::warn!("feature column {d} is constant; its scale is left at 1");
                1.0
            });
        }
        let target_mean = y.sum() / n;
        let mut target_std = (y.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(target_std > 0.0 && target_std.is_finite()) {
            log::warn!("target is constant; its scale is left at 1");
            target_std = 1.0;
        }
        Ok(Standardization {
            feature_means,
            feature_stds,
            target_mean,
            target_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_means.len()
    }

    pub fn apply_features(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (d, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.feature_means[d], self.feature_stds[d]);
            col.apply(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn apply_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.target_mean) / self.target_std)
    }

    pub fn invert_features(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (d, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.feature_means[d], self.feature_stds[d]);
            col.apply(|v| *v = *v * s + m);
        }
        out
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

/// Training or test data. `x` is `n × D`; both `x` and `y` are in the
/// (possibly identity) standardized units recorded in `standardization`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    standardization: Standardization,
}

impl Dataset {
    /// Wraps already-prepared data with an identity standardization record.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let d = x.ncols();
        Self::with_standardization(x, y, Standardization::identity(d))
    }

    pub fn with_standardization(x: DMatrix<f64>, y: DVector<f64>, standardization: Standardization) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one feature"));
        }
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "{} input rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if standardization.dim() != x.ncols() {
            return Err(Error::invalid("standardization record has the wrong dimension"));
        }
        if standardization
            .feature_stds
            .iter()
            .chain([&standardization.target_std])
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid("standardization scales must be strictly positive"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset { x, y, standardization })
    }

    /// Standardizes raw data with its own statistics.
    pub fn standardized(x_raw: &DMatrix<f64>, y_raw: &DVector<f64>) -> Result<Self> {
        let s = Standardization::fit(x_raw, y_raw)?;
        Self::from_raw(x_raw, y_raw, s)
    }

    /// Standardizes raw data with a given (e.g. training-split) record.
    pub fn from_raw(x_raw: &DMatrix<f64>, y_raw: &DVector<f64>, s: Standardization) -> Result<Self> {
        let x = s.apply_features(x_raw);
        let y = s.apply_targets(y_raw);
        Self::with_standardization(x, y, s)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows `rows` (in the given order), keeping the standardization record.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::invalid("subset must select at least one row"));
        }
        if let Some(r) = rows.iter().find(|r| **r >= self.n()) {
            return Err(Error::invalid(format!("row {r} out of range for {} rows", self.n())));
        }
        Ok(Dataset {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            standardization: self.standardization.clone(),
        })
    }

    /// Inputs and targets mapped back to raw units.
    pub fn raw(&self) -> (DMatrix<f64>, DVector<f64>) {
        let s = &self.standardization;
        (s.invert_features(&self.x), self.y.map(|v| s.invert_target(v)))
    }

    /// Per-column standard deviation of the (stored) inputs.
    pub fn feature_spread(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.x
            .column_iter()
            .map(|c| {
                let m = c.sum() / n;
                (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}
