//! Kernel evaluation and the dense linear algebra everything else builds on.
//!
//! All matrices are dense `nalgebra` matrices. Inputs are stored `n × D`
//! (one row per point); kernels read them column by column so the inner loops
//! stay contiguous.

mod cholesky;
mod kernel;

pub use cholesky::{chol_solve, cholesky_with_jitter, log_det, CholeskyFactor, JITTER_SCHEDULE};
pub use kernel::{kernel_matrix, Kernel, RbfArd};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared kernel and noise parameters, all stored in log space.
///
/// Parameter vectors produced by [`Hyperparameters::to_vec`] are ordered
/// `[log ℓ_1, …, log ℓ_D, log σ_f, log σ_y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_std: f64,
    pub log_noise_std: f64,
}

impl Hyperparameters {
    pub fn new(log_lengthscales: Vec<f64>, log_signal_std: f64, log_noise_std: f64) -> Result<Self> {
        let hyp = Hyperparameters {
            log_lengthscales,
            log_signal_std,
            log_noise_std,
        };
        hyp.validate()?;
        Ok(hyp)
    }

    /// Builds hyperparameters from natural-scale values.
    pub fn from_natural(lengthscales: &[f64], signal_std: f64, noise_std: f64) -> Result<Self> {
        if lengthscales
            .iter()
            .chain([&signal_std, &noise_std])
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::invalid(
                "natural-scale hyperparameters must be strictly positive",
            ));
        }
        Self::new(
            lengthscales.iter().map(|l| l.ln()).collect(),
            signal_std.ln(),
            noise_std.ln(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_lengthscales.is_empty() {
            return Err(Error::invalid("at least one lengthscale is required"));
        }
        let all = self.to_vec();
        if let Some(i) = all.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("hyperparameter {i} is not finite")));
        }
        // exp() of a finite but huge value still overflows
        if all.iter().any(|v| !v.exp().is_finite() || v.exp() <= 0.0) {
            return Err(Error::invalid("hyperparameter out of representable range"));
        }
        Ok(())
    }

    /// Input dimensionality D.
    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Number of free parameters, D + 2.
    pub fn n_params(&self) -> usize {
        self.dim() + 2
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_signal_std).exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise_std).exp()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_std);
        v.push(self.log_noise_std);
        v
    }

    pub fn from_slice(params: &[f64]) -> Result<Self> {
        if params.len() < 3 {
            return Err(Error::invalid(format!(
                "parameter vector needs at least 3 entries, got {}",
                params.len()
            )));
        }
        let d = params.len() - 2;
        Self::new(params[..d].to_vec(), params[d], params[d + 1])
    }

    pub fn kernel(&self) -> RbfArd {
        RbfArd::from_hyperparameters(self)
    }
}
