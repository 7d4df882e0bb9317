use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_batch, AggregationConfig, Method};
use crate::ensemble::ExpertPool;
use crate::error::{Error, Result};
use crate::gp::{Dataset, GaussianPrediction, Standardization};
use crate::numerics::Hyperparameters;
use crate::partition::Partition;

/// Everything needed to rebuild a trained pool without re-optimizing:
/// standardized training data, shared hyperparameters and the partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub version: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub standardization: Standardization,
    pub hyperparameters: Hyperparameters,
    pub partition: Partition,
    /// Standardized inputs, row-major.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SavedModel {
    pub fn from_pool(pool: &ExpertPool, feature_names: Vec<String>, target_name: String) -> Self {
        let data = pool.data();
        let x = data.x().transpose().as_slice().to_vec();
        SavedModel {
            version: crate::VERSION.to_string(),
            feature_names,
            target_name,
            standardization: data.standardization().clone(),
            hyperparameters: pool.hyperparameters().clone(),
            partition: pool.partition().clone(),
            x,
            y: data.y().as_slice().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.standardization.dim()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let n = self.y.len();
        let d = self.dim();
        if d == 0 || self.x.len() != n * d {
            return Err(Error::Config("model file has inconsistent data dimensions".into()));
        }
        Dataset::with_standardization(
            DMatrix::from_row_slice(n, d, &self.x),
            DVector::from_vec(self.y.clone()),
            self.standardization.clone(),
        )
    }

    pub fn pool(&self) -> Result<ExpertPool> {
        ExpertPool::with_hyperparameters(&self.dataset()?, &self.partition, &self.hyperparameters)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Aggregated y-space predictions at raw inputs, returned in raw target
    /// units.
    pub fn predict(
        &self,
        x_raw: &DMatrix<f64>,
        cell: &AggregationConfig,
        master_fraction: Option<f64>,
        seed: u64,
    ) -> Result<Vec<Result<GaussianPrediction>>> {
        if x_raw.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "inputs have {} columns, model expects {}",
                x_raw.ncols(),
                self.dim()
            )));
        }
        let mut pool = self.pool()?;
        let x = self.standardization.apply_features(x_raw);
        let noise = self.hyperparameters.noise_variance();
        let points = if cell.method == Method::Grbcm {
            pool.build_grbcm(master_fraction, seed.wrapping_add(1))?;
            let p = pool.predict_grbcm(&x, cell.space)?;
            aggregate_batch(cell, &p.children, Some((&p.master_means, &p.master_variances)))?
        } else {
            aggregate_batch(cell, &pool.predict_experts(&x, cell.space)?, None)?
        };
        let s = &self.standardization;
        Ok(points
            .into_iter()
            .map(|r| {
                r.map(|a| {
                    let p = a.prediction.lift(noise);
                    GaussianPrediction {
                        mean: s.invert_target(p.mean),
                        variance: p.variance * s.target_std * s.target_std,
                        space: p.space,
                    }
                })
            })
            .collect())
    }
}
