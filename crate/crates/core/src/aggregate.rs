//! Combining per-expert Gaussian predictions into one Gaussian per test point.
//!
//! Every weighting functional ψ follows one convention: smaller ψ means a more
//! confident expert. Tempered softmax weights are `β_j ∝ exp(−T ψ_j)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::ExpertPredictions;
use crate::error::{Error, Result};
use crate::gp::{GaussianPrediction, Space};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Poe,
    Gpoe,
    Bcm,
    Rbcm,
    Grbcm,
    Barycenter,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Poe,
        Method::Gpoe,
        Method::Bcm,
        Method::Rbcm,
        Method::Grbcm,
        Method::Barycenter,
    ];

    /// PoE and BCM fix every weight to one.
    pub fn uses_weighting(self) -> bool {
        !matches!(self, Method::Poe | Method::Bcm)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Poe => "poe",
            Method::Gpoe => "gpoe",
            Method::Bcm => "bcm",
            Method::Rbcm => "rbcm",
            Method::Grbcm => "grbcm",
            Method::Barycenter => "barycenter",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Uniform,
    Variance,
    DiffEntropy,
    Wasserstein,
}

impl std::fmt::Display for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Functional::Uniform => "unif",
            Functional::Variance => "var",
            Functional::DiffEntropy => "entr",
            Functional::Wasserstein => "w2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Softmax {
        temperature: f64,
    },
    /// Weights taken directly from the functional: `β_j = −ψ_j` for the
    /// prior-relative functionals, `β_j = 1` for uniform.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightingSpec {
    pub functional: Functional,
    pub transform: Transform,
    pub normalized: bool,
}

impl WeightingSpec {
    pub fn softmax(functional: Functional, temperature: f64) -> Self {
        WeightingSpec {
            functional,
            transform: Transform::Softmax { temperature },
            normalized: true,
        }
    }

    pub fn raw(functional: Functional, normalized: bool) -> Self {
        WeightingSpec {
            functional,
            transform: Transform::Raw,
            normalized,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self.transform {
            Transform::Softmax { temperature } => Some(temperature),
            Transform::Raw => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.transform {
            Transform::Softmax { temperature } => {
                if !self.normalized {
                    return Err(Error::invalid("softmax weights are always normalized"));
                }
                if !(temperature >= 0.0) || !temperature.is_finite() {
                    return Err(Error::invalid(format!(
                        "temperature must be finite and non-negative, got {temperature}"
                    )));
                }
            }
            Transform::Raw => {
                if self.functional == Functional::Variance {
                    return Err(Error::invalid(
                        "raw variance weights are undefined; use a softmax transform",
                    ));
                }
            }
        }
        Ok(())
    }
}

impl Default for WeightingSpec {
    fn default() -> Self {
        WeightingSpec::softmax(Functional::Variance, 100.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarycenterMode {
    /// `σ² = Σ β_j σ_j²`.
    #[default]
    PaperVarianceAvg,
    /// `σ = Σ β_j σ_j`, the exact one-dimensional W₂ barycenter.
    ExactW2,
}

impl std::fmt::Display for BarycenterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BarycenterMode::PaperVarianceAvg => "variance_avg",
            BarycenterMode::ExactW2 => "exact_w2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub method: Method,
    #[serde(default)]
    pub weighting: WeightingSpec,
    #[serde(default = "default_space")]
    pub space: Space,
    #[serde(default)]
    pub barycenter_mode: BarycenterMode,
}

fn default_space() -> Space {
    Space::F
}

impl AggregationConfig {
    pub fn new(method: Method, weighting: WeightingSpec) -> Self {
        AggregationConfig {
            method,
            weighting,
            space: Space::F,
            barycenter_mode: BarycenterMode::default(),
        }
    }

    pub fn in_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn with_barycenter_mode(mut self, mode: BarycenterMode) -> Self {
        self.barycenter_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.method.uses_weighting() {
            return Ok(());
        }
        self.weighting.validate()?;
        if self.method == Method::Barycenter && !self.weighting.normalized {
            return Err(Error::invalid("barycenter weights must be normalized"));
        }
        Ok(())
    }

    /// Short identifier such as `gpoe_var_T100_f` or `rbcm_entr_raw_y`.
    pub fn label(&self) -> String {
        let mut s = self.method.to_string();
        if self.method.uses_weighting() {
            s.push('_');
            s.push_str(&self.weighting.functional.to_string());
            match self.weighting.transform {
                Transform::Softmax { temperature } => s.push_str(&format!("_T{temperature}")),
                Transform::Raw if self.weighting.normalized => s.push_str("_rawnorm"),
                Transform::Raw => s.push_str("_raw"),
            }
        }
        if self.method == Method::Barycenter && self.barycenter_mode == BarycenterMode::ExactW2 {
            s.push_str("_w2");
        }
        s.push('_');
        s.push_str(&self.space.to_string());
        s
    }
}

/// Expert predictions at a single test point.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSlice {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Prior variance σ_*² in the same space as `variances`.
    pub prior_variance: f64,
    pub space: Space,
    /// grBCM master prediction `(μ_c, σ_c²)`; `means`/`variances` then hold
    /// the augmented children.
    pub master: Option<(f64, f64)>,
}

impl ExpertSlice {
    pub fn new(means: Vec<f64>, variances: Vec<f64>, prior_variance: f64, space: Space) -> Result<Self> {
        let s = ExpertSlice {
            means,
            variances,
            prior_variance,
            space,
            master: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_master(mut self, mean: f64, variance: f64) -> Result<Self> {
        self.master = Some((mean, variance));
        self.validate()?;
        Ok(self)
    }

    pub fn n_experts(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.means.len() != self.variances.len() {
            return Err(Error::invalid(format!(
                "slice needs matching non-empty means and variances, got {} and {}",
                self.means.len(),
                self.variances.len()
            )));
        }
        check_variance(self.prior_variance, "prior variance")?;
        for (j, v) in self.variances.iter().enumerate() {
            check_variance(*v, &format!("expert {j} variance"))?;
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("expert means must be finite"));
        }
        if let Some((m, v)) = self.master {
            check_variance(v, "master variance")?;
            if !m.is_finite() {
                return Err(Error::invalid("master mean must be finite"));
            }
        }
        Ok(())
    }
}

fn check_variance(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be positive and finite, got {v}")))
    }
}

/// Squared 2-Wasserstein distance between N(m1, v1) and N(m2, v2).
pub fn w2_gaussian(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if v1 < 0.0 || v2 < 0.0 || v1.is_nan() || v2.is_nan() {
        return Err(Error::invalid(format!(
            "variances must be non-negative, got {v1} and {v2}"
        )));
    }
    let ds = v1.sqrt() - v2.sqrt();
    Ok((m1 - m2) * (m1 - m2) + ds * ds)
}

/// ψ for every expert of `slice`, relative to `reference_variance` where the
/// functional needs one.
pub fn psi_with_reference(slice: &ExpertSlice, functional: Functional, reference_variance: f64) -> Result<Vec<f64>> {
    check_variance(reference_variance, "reference variance")?;
    for (j, v) in slice.variances.iter().enumerate() {
        check_variance(*v, &format!("expert {j} variance"))?;
    }
    let ln_ref = reference_variance.ln();
    slice
        .means
        .iter()
        .zip(&slice.variances)
        .map(|(&m, &v)| {
            Ok(match functional {
                Functional::Uniform => 0.0,
                Functional::Variance => v,
                Functional::DiffEntropy => -0.5 * (ln_ref - v.ln()),
                Functional::Wasserstein => -w2_gaussian(m, v, 0.0, reference_variance)?,
            })
        })
        .collect()
}

/// ψ relative to the slice's prior variance.
pub fn psi(slice: &ExpertSlice, functional: Functional) -> Result<Vec<f64>> {
    psi_with_reference(slice, functional, slice.prior_variance)
}

/// Turns ψ values into weights β.
pub fn weights(psi: &[f64], spec: &WeightingSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if psi.is_empty() {
        return Err(Error::invalid("no experts to weight"));
    }
    if psi.iter().any(|p| p.is_nan()) {
        return Err(Error::invalid("ψ contains NaN"));
    }
    let j = psi.len() as f64;
    match spec.transform {
        Transform::Softmax { temperature } => {
            if temperature == 0.0 || spec.functional == Functional::Uniform {
                return Ok(vec![1.0 / j; psi.len()]);
            }
            let scores: Vec<f64> = psi.iter().map(|p| -temperature * p).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::invalid("no expert has a finite ψ"));
            }
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
        Transform::Raw => {
            let raw: Vec<f64> = match spec.functional {
                Functional::Uniform => vec![1.0; psi.len()],
                Functional::DiffEntropy | Functional::Wasserstein => psi.iter().map(|p| -p).collect(),
                Functional::Variance => unreachable!("rejected by validate"),
            };
            if raw.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid("raw weights must be finite"));
            }
            if !spec.normalized {
                return Ok(raw);
            }
            let total: f64 = raw.iter().sum();
            if !(total > 0.0) {
                return Err(Error::invalid(format!("cannot normalize weights summing to {total}")));
            }
            Ok(raw.into_iter().map(|b| b / total).collect())
        }
    }
}

fn check_beta(slice: &ExpertSlice, beta: &[f64]) -> Result<()> {
    if beta.len() != slice.n_experts() {
        return Err(Error::invalid(format!(
            "{} weights for {} experts",
            beta.len(),
            slice.n_experts()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    Ok(())
}

fn from_precision(precision: f64, weighted_mean_sum: f64, space: Space, what: &str) -> Result<GaussianPrediction> {
    if !(precision > 0.0) || !precision.is_finite() {
        return Err(Error::numerical(format!(
            "{what} aggregate precision is {precision}; the weighted experts over-correct the prior"
        )));
    }
    let variance = 1.0 / precision;
    Ok(GaussianPrediction {
        mean: variance * weighted_mean_sum,
        variance,
        space,
    })
}

/// Generalized product of experts; plain PoE is `β ≡ 1`.
pub fn aggregate_gpoe(slice: &ExpertSlice, beta: &[f64]) -> Result<GaussianPrediction> {
    check_beta(slice, beta)?;
    let mut precision = 0.0;
    let mut weighted = 0.0;
    for ((m, v), b) in slice.means.iter().zip(&slice.variances).zip(beta) {
        precision += b / v;
        weighted += b * m / v;
    }
    from_precision(precision, weighted, slice.space, "gPoE")
}

/// Robust Bayesian committee machine; plain BCM is `β ≡ 1`.
pub fn aggregate_rbcm(slice: &ExpertSlice, beta: &[f64]) -> Result<GaussianPrediction> {
    check_beta(slice, beta)?;
    let prior_precision = 1.0 / slice.prior_variance;
    let mut precision = prior_precision;
    let mut weighted = 0.0;
    for ((m, v), b) in slice.means.iter().zip(&slice.variances).zip(beta) {
        precision += b * (1.0 / v - prior_precision);
        weighted += b * m / v;
    }
    from_precision(precision, weighted, slice.space, "rBCM").map_err(|e| {
        let sum: f64 = beta.iter().sum();
        Error::numerical(format!("{e} (Σβ = {sum:.6}, σ_*² = {:.6e})", slice.prior_variance))
    })
}

/// Generalized rBCM over augmented children. `beta[0]` belongs to the first
/// child and is normally 1.
pub fn aggregate_grbcm(slice: &ExpertSlice, beta: &[f64]) -> Result<GaussianPrediction> {
    check_beta(slice, beta)?;
    let (mu_c, var_c) = slice
        .master
        .ok_or_else(|| Error::invalid("grBCM needs the master prediction"))?;
    let master_precision = 1.0 / var_c;
    let mut precision = master_precision;
    let mut weighted = 0.0;
    let mut sum = 0.0;
    for ((m, v), b) in slice.means.iter().zip(&slice.variances).zip(beta) {
        precision += b * (1.0 / v - master_precision);
        weighted += b * m / v;
        sum += b;
    }
    weighted -= (sum - 1.0) * master_precision * mu_c;
    from_precision(precision, weighted, slice.space, "grBCM")
        .map_err(|e| Error::numerical(format!("{e} (Σβ = {sum:.6}, σ_c² = {var_c:.6e})")))
}

/// Per-point Wasserstein barycenter of the expert Gaussians.
pub fn aggregate_barycenter(slice: &ExpertSlice, beta: &[f64], mode: BarycenterMode) -> Result<GaussianPrediction> {
    check_beta(slice, beta)?;
    let sum: f64 = beta.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || beta.iter().any(|b| *b < 0.0) {
        return Err(Error::invalid(format!(
            "barycenter weights must be a convex combination, sum is {sum}"
        )));
    }
    let mean = slice.means.iter().zip(beta).map(|(m, b)| b * m).sum();
    let variance = match mode {
        BarycenterMode::PaperVarianceAvg => slice.variances.iter().zip(beta).map(|(v, b)| b * v).sum(),
        BarycenterMode::ExactW2 => {
            let sd: f64 = slice.variances.iter().zip(beta).map(|(v, b)| b * v.sqrt()).sum();
            sd * sd
        }
    };
    Ok(GaussianPrediction {
        mean,
        variance,
        space: slice.space,
    })
}

/// An aggregated prediction together with the weights that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregated {
    pub prediction: GaussianPrediction,
    pub weights: Vec<f64>,
}

/// Computes ψ, then β, then applies the configured rule.
pub fn aggregate(config: &AggregationConfig, slice: &ExpertSlice) -> Result<Aggregated> {
    config.validate()?;
    slice.validate()?;
    if slice.space != config.space {
        return Err(Error::invalid(format!(
            "slice is in {}-space but the config aggregates in {}-space",
            slice.space, config.space
        )));
    }
    let j = slice.n_experts();
    let beta = match config.method {
        Method::Poe | Method::Bcm => vec![1.0; j],
        Method::Grbcm => {
            let (_, var_c) = slice
                .master
                .ok_or_else(|| Error::invalid("grBCM needs the master prediction"))?;
            let mut beta = vec![1.0];
            if j > 1 {
                let rest = ExpertSlice {
                    means: slice.means[1..].to_vec(),
                    variances: slice.variances[1..].to_vec(),
                    ..slice.clone()
                };
                let p = psi_with_reference(&rest, config.weighting.functional, var_c)?;
                beta.extend(weights(&p, &config.weighting)?);
            }
            beta
        }
        _ => weights(&psi(slice, config.weighting.functional)?, &config.weighting)?,
    };
    let prediction = match config.method {
        Method::Poe | Method::Gpoe => aggregate_gpoe(slice, &beta)?,
        Method::Bcm | Method::Rbcm => aggregate_rbcm(slice, &beta)?,
        Method::Grbcm => aggregate_grbcm(slice, &beta)?,
        Method::Barycenter => aggregate_barycenter(slice, &beta, config.barycenter_mode)?,
    };
    Ok(Aggregated {
        prediction,
        weights: beta,
    })
}

/// Aggregates every test point of `experts` in parallel. For grBCM, `experts`
/// holds the augmented children and `master` the master means and variances.
/// Each point succeeds or fails on its own.
pub fn aggregate_batch(
    config: &AggregationConfig,
    experts: &ExpertPredictions,
    master: Option<(&[f64], &[f64])>,
) -> Result<Vec<Result<Aggregated>>> {
    config.validate()?;
    let t = experts.n_points();
    if let Some((m, v)) = master {
        if m.len() != t || v.len() != t {
            return Err(Error::invalid("master predictions do not match the test set"));
        }
    }
    Ok((0..t)
        .into_par_iter()
        .map(|i| {
            let mut slice = ExpertSlice {
                means: experts.row_means(i),
                variances: experts.row_variances(i),
                prior_variance: experts.prior_variances[i],
                space: experts.space,
                master: None,
            };
            if let Some((m, v)) = master {
                slice.master = Some((m[i], v[i]));
            }
            aggregate(config, &slice)
        })
        .collect())
}
