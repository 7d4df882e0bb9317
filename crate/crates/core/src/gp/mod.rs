//! Exact GP regression with a zero prior mean.

mod dataset;
mod likelihood;

pub use dataset::{Dataset, Standardization};
pub(crate) use likelihood::{factorize, maximize};
pub use likelihood::{fit, lml_and_gradient, lml_gradient, log_marginal_likelihood, FitResult};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CholeskyFactor, Hyperparameters, Kernel, RbfArd};

/// Whether a prediction describes the latent function or noisy outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Latent function values f.
    F,
    /// Observations y = f + ε.
    Y,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::F => "f",
            Space::Y => "y",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
    pub space: Space,
}

impl GaussianPrediction {
    /// Maps an f-space prediction to y-space by adding the noise variance.
    /// Y-space predictions are returned unchanged.
    pub fn lift(self, noise_variance: f64) -> GaussianPrediction {
        match self.space {
            Space::F => GaussianPrediction {
                mean: self.mean,
                variance: self.variance + noise_variance,
                space: Space::Y,
            },
            Space::Y => self,
        }
    }
}

/// Conventional starting point on standardized data: each lengthscale equal to
/// the spread of its input dimension, unit signal std, noise std 0.1.
pub fn default_init(data: &Dataset) -> Hyperparameters {
    let ls = data
        .feature_spread()
        .into_iter()
        .map(|s| if s > 1e-12 { s.ln() } else { 0.0 })
        .collect();
    Hyperparameters {
        log_lengthscales: ls,
        log_signal_std: 0.0,
        log_noise_std: 0.1f64.ln(),
    }
}

/// A GP conditioned on its training data. Immutable once built.
#[derive(Clone, Debug)]
pub struct TrainedGP {
    x: DMatrix<f64>,
    hyp: Hyperparameters,
    kernel: RbfArd,
    factor: CholeskyFactor,
    alpha: DVector<f64>,
}

impl TrainedGP {
    pub fn new(data: &Dataset, hyp: &Hyperparameters) -> Result<Self> {
        let (_, factor) = factorize(data, hyp)?;
        let alpha = factor.solve_vec(data.y());
        Ok(TrainedGP {
            x: data.x().clone(),
            hyp: hyp.clone(),
            kernel: hyp.kernel(),
            factor,
            alpha,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn noise_variance(&self) -> f64 {
        self.hyp.noise_variance()
    }

    /// Prior variance k(x, x) in the requested space.
    pub fn prior_variance(&self, x_star: &[f64], space: Space) -> f64 {
        let v = self.kernel.prior_variance(x_star);
        match space {
            Space::F => v,
            Space::Y => v + self.noise_variance(),
        }
    }

    pub fn predict(&self, x_star: &[f64], space: Space) -> Result<GaussianPrediction> {
        if x_star.len() != self.dim() {
            return Err(Error::invalid(format!(
                "test point has {} coordinates, model expects {}",
                x_star.len(),
                self.dim()
            )));
        }
        let xs = DMatrix::from_row_slice(1, self.dim(), x_star);
        Ok(self.predict_batch(&xs, space)?.remove(0))
    }

    /// Predictions for every row of `x_star` (t × D).
    pub fn predict_batch(&self, x_star: &DMatrix<f64>, space: Space) -> Result<Vec<GaussianPrediction>> {
        if x_star.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "test inputs have {} columns, model expects {}",
                x_star.ncols(),
                self.dim()
            )));
        }
        // n × t cross-covariance
        let ks = self.kernel.matrix(&self.x, x_star)?;
        let means = ks.tr_mul(&self.alpha);
        let mut v = ks;
        self.factor.solve_lower_mut(&mut v);
        let noise = self.noise_variance();
        Ok((0..x_star.nrows())
            .map(|i| {
                let point: Vec<f64> = x_star.row(i).iter().copied().collect();
                let prior = self.kernel.prior_variance(&point);
                let fvar = (prior - v.column(i).norm_squared()).max(0.0);
                let variance = match space {
                    Space::F => fvar,
                    Space::Y => fvar + noise,
                };
                GaussianPrediction {
                    mean: means[i],
                    variance,
                    space,
                }
            })
            .collect())
    }
}

/// Negative log density of `y_true` under a y-space prediction.
pub fn nlpd(pred: &GaussianPrediction, y_true: f64) -> Result<f64> {
    if pred.space != Space::Y {
        return Err(Error::invalid(
            "NLPD is scored on y-space predictions; lift f-space ones first",
        ));
    }
    if !(pred.variance > 0.0) || !pred.variance.is_finite() {
        return Err(Error::invalid(format!(
            "predictive variance must be positive, got {}",
            pred.variance
        )));
    }
    let r = y_true - pred.mean;
    Ok(0.5 * (2.0 * PI * pred.variance).ln() + r * r / (2.0 * pred.variance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y_pred(mean: f64, variance: f64) -> GaussianPrediction {
        GaussianPrediction {
            mean,
            variance,
            space: Space::Y,
        }
    }

    #[test]
    fn nlpd_values() {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert!((nlpd(&y_pred(0.0, 1.0), 0.0).unwrap() - half_log_2pi).abs() < 1e-14);
        assert!((nlpd(&y_pred(0.0, 1.0), 0.0).unwrap() - 0.91894).abs() < 1e-5);
        assert!((nlpd(&y_pred(0.0, 1.0), 1.0).unwrap() - 1.41894).abs() < 1e-5);
        let expected = 0.5 * (2.0 * PI * 0.25).ln() + 2.0;
        assert!((nlpd(&y_pred(2.0, 0.25), 1.0).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 2.22579).abs() < 1e-5);
    }

    #[test]
    fn nlpd_rejects_bad_variance_and_f_space() {
        assert!(nlpd(&y_pred(0.0, 0.0), 0.0).is_err());
        assert!(nlpd(&y_pred(0.0, -1.0), 0.0).is_err());
        let f = GaussianPrediction {
            mean: 0.0,
            variance: 1.0,
            space: Space::F,
        };
        assert!(nlpd(&f, 0.0).is_err());
        assert!(nlpd(&f.lift(0.5), 0.0).is_ok());
    }

    #[test]
    fn lift_adds_noise_once() {
        let f = GaussianPrediction {
            mean: 1.0,
            variance: 2.0,
            space: Space::F,
        };
        let y = f.lift(0.5);
        assert_eq!((y.variance, y.space), (2.5, Space::Y));
        assert_eq!(y.lift(0.5), y);
    }
}
