use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{cholesky_with_jitter, log_det, CholeskyFactor, Hyperparameters, Kernel};
use crate::optim::{minimize, OptimizerOptions, Termination};

fn check_dims(data: &Dataset, hyp: &Hyperparameters) -> Result<()> {
    if data.dim() != hyp.dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features but hyperparameters have {} lengthscales",
            data.dim(),
            hyp.dim()
        )));
    }
    Ok(())
}

/// Factorizes `K_x + σ_y² I` for the dataset.
pub(crate) fn factorize(data: &Dataset, hyp: &Hyperparameters) -> Result<(DMatrix<f64>, CholeskyFactor)> {
    check_dims(data, hyp)?;
    let kern = hyp.kernel();
    let k = kern.matrix(data.x(), data.x())?;
    let mut ky = k.clone();
    let noise = hyp.noise_variance();
    for i in 0..data.n() {
        ky[(i, i)] += noise;
    }
    let f = cholesky_with_jitter(&ky, "K + noise")?;
    Ok((k, f))
}

/// log N(y | 0, K_x + σ_y² I).
pub fn log_marginal_likelihood(data: &Dataset, hyp: &Hyperparameters) -> Result<f64> {
    let (_, f) = factorize(data, hyp)?;
    let alpha = f.solve_vec(data.y());
    Ok(lml_from_parts(data, &f, &alpha))
}

fn lml_from_parts(data: &Dataset, f: &CholeskyFactor, alpha: &nalgebra::DVector<f64>) -> f64 {
    let n = data.n() as f64;
    -0.5 * data.y().dot(alpha) - 0.5 * log_det(f) - 0.5 * n * (2.0 * PI).ln()
}

/// Log marginal likelihood and its gradient with respect to the log-space
/// parameter vector `[log ℓ_1..D, log σ_f, log σ_y]`.
pub fn lml_and_gradient(data: &Dataset, hyp: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    let (k, f) = factorize(data, hyp)?;
    let alpha = f.solve_vec(data.y());
    let lml = lml_from_parts(data, &f, &alpha);

    // W = ααᵀ − (K + σ_y² I)^{-1}; ∂lml/∂θ = ½ tr(W ∂K/∂θ)
    let mut w = f.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);

    let kern = hyp.kernel();
    let mut grad: Vec<f64> = kern
        .contract_gradients(data.x(), &k, &w)
        .into_iter()
        .map(|g| 0.5 * g)
        .collect();
    // ∂(σ_y² I)/∂log σ_y = 2σ_y² I
    grad.push(0.5 * 2.0 * hyp.noise_variance() * w.trace());
    Ok((lml, grad))
}

pub fn lml_gradient(data: &Dataset, hyp: &Hyperparameters) -> Result<Vec<f64>> {
    lml_and_gradient(data, hyp).map(|(_, g)| g)
}

/// Outcome of hyperparameter optimization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub hyperparameters: Hyperparameters,
    pub lml: f64,
    pub initial_lml: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Log marginal likelihood at the start and after each accepted step.
    pub lml_trace: Vec<f64>,
}

impl FitResult {
    /// Set when the optimizer stopped because no acceptable step was found;
    /// `hyperparameters` is then the best iterate reached.
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

/// Maximizes a log marginal likelihood `objective` over log-space
/// hyperparameters starting from `init`.
pub(crate) fn maximize<F>(objective: F, init: &Hyperparameters, opts: &OptimizerOptions) -> Result<FitResult>
where
    F: Fn(&Hyperparameters) -> Result<(f64, Vec<f64>)>,
{
    init.validate()?;
    let neg = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let h = Hyperparameters::from_slice(p)?;
        let (l, g) = objective(&h)?;
        Ok((-l, g.into_iter().map(|v| -v).collect()))
    };
    let r = minimize(neg, &init.to_vec(), opts)?;
    if r.line_search_failed() {
        log::warn!(
            "line search failed after {} iterations; keeping best iterate",
            r.iterations
        );
    }
    let lml_trace: Vec<f64> = r.history.iter().map(|v| -v).collect();
    Ok(FitResult {
        hyperparameters: Hyperparameters::from_slice(&r.x)?,
        lml: -r.f,
        initial_lml: lml_trace[0],
        iterations: r.iterations,
        evaluations: r.evaluations,
        termination: r.termination,
        lml_trace,
    })
}

/// Fits the hyperparameters of a single exact GP by maximizing its log
/// marginal likelihood.
pub fn fit(data: &Dataset, init: &Hyperparameters, opts: &OptimizerOptions) -> Result<FitResult> {
    check_dims(data, init)?;
    maximize(|h| lml_and_gradient(data, h), init, opts)
}
