use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{read_table, split_standardized, synth_1d, Split};
use super::rmse;
use crate::aggregate::{aggregate_batch, AggregationConfig, Functional, Method, Transform, WeightingSpec};
use crate::ensemble::{train_pool, ExpertPool};
use crate::error::{Error, Result};
use crate::gp::{self, default_init, nlpd, Dataset, GaussianPrediction, Space, TrainedGP};
use crate::optim::OptimizerOptions;
use crate::partition::{kmeans_partition, random_partition, Partition, PartitionStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        /// Target column name; the last column when absent.
        #[serde(default)]
        target: Option<String>,
    },
    Synthetic {
        n: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub strategy: PartitionStrategy,
    pub points_per_expert: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// One expert pool is trained per entry; every cell is scored on each.
    #[serde(default = "default_partitions")]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default = "default_cells")]
    pub cells: Vec<AggregationConfig>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    /// grBCM master size as a fraction of the training rows; by default the
    /// master is as large as the mean expert.
    #[serde(default)]
    pub master_fraction: Option<f64>,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
    /// Full-GP and linear baselines run when the training set has at most
    /// this many rows.
    #[serde(default = "default_baseline_cap")]
    pub baseline_cap: usize,
    #[serde(default = "default_true")]
    pub baselines: bool,
    /// When false every wall-clock field is written as 0, which makes reports
    /// byte-comparable across runs.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_partitions() -> Vec<PartitionSpec> {
    vec![PartitionSpec {
        strategy: PartitionStrategy::Kmeans,
        points_per_expert: 100,
    }]
}

fn default_kmeans_iter() -> usize {
    100
}

fn default_baseline_cap() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

/// The cells of the main benchmark table: uniform and softmax-variance gPoE,
/// differential-entropy rBCM, softmax-variance barycenter and grBCM.
pub fn default_cells() -> Vec<AggregationConfig> {
    vec![
        AggregationConfig::new(Method::Gpoe, WeightingSpec::raw(Functional::Uniform, true)),
        AggregationConfig::new(Method::Gpoe, WeightingSpec::softmax(Functional::Variance, 100.0)),
        AggregationConfig::new(Method::Rbcm, WeightingSpec::raw(Functional::DiffEntropy, false)),
        AggregationConfig::new(Method::Barycenter, WeightingSpec::softmax(Functional::Variance, 100.0)),
        AggregationConfig::new(Method::Grbcm, WeightingSpec::raw(Functional::DiffEntropy, false)),
    ]
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        ExperimentConfig {
            data,
            test_fraction: default_test_fraction(),
            seed: 0,
            partitions: default_partitions(),
            cells: default_cells(),
            optimizer: OptimizerOptions::default(),
            master_fraction: None,
            kmeans_max_iter: default_kmeans_iter(),
            baseline_cap: default_baseline_cap(),
            baselines: true,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.partitions.is_empty() {
            return bad("at least one partition is required".into());
        }
        if self.partitions.iter().any(|p| p.points_per_expert == 0) {
            return bad("points_per_expert must be positive".into());
        }
        if let Some(f) = self.master_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("master_fraction must lie in (0, 1), got {f}"));
            }
        }
        for c in &self.cells {
            c.validate()
                .map_err(|e| Error::Config(format!("cell {}: {e}", c.label())))?;
        }
        if let DataSource::Synthetic { n, noise_std } = self.data {
            if n < 10 || !(noise_std >= 0.0) {
                return bad(format!(
                    "synthetic data needs n >= 10 and noise_std >= 0, got {n} and {noise_std}"
                ));
            }
        }
        Ok(())
    }

    /// Loads (or generates) the data and applies the seeded split.
    pub fn prepare(&self) -> Result<Split> {
        self.validate()?;
        let (x, y) = match &self.data {
            DataSource::Csv { path, target } => {
                let t = read_table(path, target.as_deref())?;
                (t.x, t.y)
            }
            DataSource::Synthetic { n, noise_std } => synth_1d(*n, self.seed, *noise_std)?.raw(),
        };
        split_standardized(&x, &y, self.test_fraction, self.seed)
    }
}

/// Scores of one cell (or baseline) on one pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub method: String,
    pub functional: Option<String>,
    pub transform: Option<String>,
    pub temperature: Option<f64>,
    pub normalized: Option<bool>,
    pub space: Space,
    pub barycenter_mode: Option<String>,
    pub partition: Option<PartitionStrategy>,
    pub points_per_expert: Option<usize>,
    pub n_experts: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean NLPD over the test set, standardized units.
    pub nlpd: Option<f64>,
    pub rmse: Option<f64>,
    pub wall_clock_seconds: f64,
    pub expert_size_min: usize,
    pub expert_size_max: usize,
    pub expert_size_mean: f64,
    pub jitter_events: usize,
    pub precision_failures: usize,
    pub failed_points: usize,
    pub failed: bool,
    pub swept_value: Option<f64>,
    pub message: Option<String>,
}

impl MetricsRow {
    fn blank(cell: String, method: String, space: Space, n_train: usize, n_test: usize) -> Self {
        MetricsRow {
            cell,
            method,
            functional: None,
            transform: None,
            temperature: None,
            normalized: None,
            space,
            barycenter_mode: None,
            partition: None,
            points_per_expert: None,
            n_experts: 1,
            n_train,
            n_test,
            nlpd: None,
            rmse: None,
            wall_clock_seconds: 0.0,
            expert_size_min: n_train,
            expert_size_max: n_train,
            expert_size_mean: n_train as f64,
            jitter_events: 0,
            precision_failures: 0,
            failed_points: 0,
            failed: false,
            swept_value: None,
            message: None,
        }
    }

    fn for_cell(cell: &AggregationConfig, split: &Split) -> Self {
        let mut row = MetricsRow::blank(
            cell.label(),
            cell.method.to_string(),
            cell.space,
            split.train.n(),
            split.test.n(),
        );
        if cell.method.uses_weighting() {
            let w = &cell.weighting;
            row.functional = Some(w.functional.to_string());
            row.transform = Some(
                match w.transform {
                    Transform::Softmax { .. } => "softmax",
                    Transform::Raw => "raw",
                }
                .to_string(),
            );
            row.temperature = w.temperature();
            row.normalized = Some(w.normalized);
        }
        if cell.method == Method::Barycenter {
            row.barycenter_mode = Some(cell.barycenter_mode.to_string());
        }
        row
    }

    fn fail(&mut self, message: String) {
        self.failed = true;
        self.nlpd = None;
        self.rmse = None;
        self.message = Some(message);
    }
}

/// A trained pool plus the bookkeeping reported alongside its cells.
pub struct TrainedGroup {
    pub spec: PartitionSpec,
    pub pool: ExpertPool,
    pub seconds: f64,
}

pub fn make_partition(config: &ExperimentConfig, spec: &PartitionSpec, train: &Dataset) -> Result<Partition> {
    let ppe = spec.points_per_expert.min(train.n());
    match spec.strategy {
        PartitionStrategy::Random => random_partition(train.n(), ppe, config.seed),
        PartitionStrategy::Kmeans => kmeans_partition(train.x(), ppe, config.seed, config.kmeans_max_iter),
    }
}

pub fn train_group(config: &ExperimentConfig, spec: &PartitionSpec, train: &Dataset) -> Result<TrainedGroup> {
    let start = Instant::now();
    let partition = make_partition(config, spec, train)?;
    let pool = train_pool(train, &partition, &default_init(train), &config.optimizer)?;
    if let Some(f) = pool.fit_result() {
        log::info!(
            "{} partition, {} experts: lml {:.3} after {} iterations ({:?})",
            spec.strategy,
            pool.n_experts(),
            f.lml,
            f.iterations,
            f.termination
        );
    }
    Ok(TrainedGroup {
        spec: *spec,
        pool,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn score(preds: &[GaussianPrediction], targets: &DVector<f64>) -> Result<(f64, f64)> {
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets.iter()) {
        total += nlpd(p, *y)?;
    }
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    Ok((total / preds.len() as f64, rmse(&means, targets.as_slice())?))
}

/// Scores every cell on a trained pool. Failures are recorded per row.
pub fn evaluate_cells(
    config: &ExperimentConfig,
    group: &mut TrainedGroup,
    cells: &[AggregationConfig],
    split: &Split,
    swept_value: Option<f64>,
) -> Vec<MetricsRow> {
    let test = &split.test;
    let noise = group.pool.hyperparameters().noise_variance();
    let sizes = group.pool.expert_sizes();
    let mut cached: [Option<Result<_>>; 2] = [None, None];
    let mut cached_grbcm: [Option<Result<_>>; 2] = [None, None];
    let mut grbcm_built: Option<Result<()>> = None;

    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let start = Instant::now();
        let mut row = MetricsRow::for_cell(cell, split);
        row.partition = Some(group.spec.strategy);
        row.points_per_expert = Some(group.spec.points_per_expert);
        row.n_experts = group.pool.n_experts();
        row.expert_size_min = *sizes.iter().min().unwrap_or(&0);
        row.expert_size_max = *sizes.iter().max().unwrap_or(&0);
        row.expert_size_mean = sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64;
        row.swept_value = swept_value;

        let slot = match cell.space {
            Space::F => 0,
            Space::Y => 1,
        };
        let outcome = if cell.method == Method::Grbcm {
            let built = grbcm_built.get_or_insert_with(|| {
                group
                    .pool
                    .build_grbcm(config.master_fraction, config.seed.wrapping_add(1))
            });
            match built {
                Err(e) => Err(Error::invalid(e.to_string())),
                Ok(()) => {
                    let preds =
                        cached_grbcm[slot].get_or_insert_with(|| group.pool.predict_grbcm(test.x(), cell.space));
                    match preds {
                        Err(e) => Err(Error::numerical(e.to_string())),
                        Ok(p) => aggregate_batch(
                            cell,
                            &p.children,
                            Some((p.master_means.as_slice(), p.master_variances.as_slice())),
                        ),
                    }
                }
            }
        } else {
            let preds = cached[slot].get_or_insert_with(|| group.pool.predict_experts(test.x(), cell.space));
            match preds {
                Err(e) => Err(Error::numerical(e.to_string())),
                Ok(p) => aggregate_batch(cell, p, None),
            }
        };

        row.jitter_events = group.pool.jitter_events();
        match outcome {
            Err(e) => row.fail(e.to_string()),
            Ok(points) => {
                let mut preds = Vec::with_capacity(points.len());
                let mut first_error = None;
                for p in points {
                    match p {
                        Ok(a) => preds.push(a.prediction.lift(noise)),
                        Err(e) => {
                            row.failed_points += 1;
                            if e.is_numerical() {
                                row.precision_failures += 1;
                            }
                            first_error.get_or_insert_with(|| e.to_string());
                        }
                    }
                }
                if let Some(msg) = first_error {
                    row.fail(format!(
                        "{} of {} test points failed; first: {msg}",
                        row.failed_points,
                        test.n()
                    ));
                } else {
                    match score(&preds, test.y()) {
                        Ok((n, r)) => {
                            row.nlpd = Some(n);
                            row.rmse = Some(r);
                        }
                        Err(e) => row.fail(e.to_string()),
                    }
                }
            }
        }
        if config.record_timing {
            row.wall_clock_seconds = group.seconds + start.elapsed().as_secs_f64();
        }
        rows.push(row);
    }
    rows
}

/// Ordinary least squares with an intercept. The predictive variance is the
/// unbiased residual variance, constant across inputs.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub residual_variance: f64,
}

impl LinearModel {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (n, d) = (data.n(), data.dim());
        if n <= d + 1 {
            return Err(Error::invalid(format!(
                "{n} rows are too few for a linear fit in {d} dimensions"
            )));
        }
        let mut design = DMatrix::from_element(n, d + 1, 1.0);
        design.view_mut((0, 1), (n, d)).copy_from(data.x());
        let svd = design.clone().svd(true, true);
        let beta = svd
            .solve(data.y(), 1e-12)
            .map_err(|e| Error::numerical(e.to_string()))?;
        let resid = data.y() - &design * &beta;
        Ok(LinearModel {
            intercept: beta[0],
            coefficients: beta.rows(1, d).into_owned(),
            residual_variance: resid.norm_squared() / (n - d - 1) as f64,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<GaussianPrediction> {
        let m = x * &self.coefficients;
        m.iter()
            .map(|v| GaussianPrediction {
                mean: v + self.intercept,
                variance: self.residual_variance,
                space: Space::Y,
            })
            .collect()
    }
}

/// Full-GP and linear-regression baselines on the training split.
pub fn run_baselines(config: &ExperimentConfig, split: &Split) -> Vec<MetricsRow> {
    let (n_train, n_test) = (split.train.n(), split.test.n());
    let mut rows = Vec::new();

    let start = Instant::now();
    let mut full = MetricsRow::blank("full_gp".into(), "full_gp".into(), Space::Y, n_train, n_test);
    let outcome = gp::fit(&split.train, &default_init(&split.train), &config.optimizer).and_then(|fit| {
        let model = TrainedGP::new(&split.train, &fit.hyperparameters)?;
        if model.factor().jitter() > 0.0 {
            full.jitter_events = 1;
        }
        let preds = model.predict_batch(split.test.x(), Space::Y)?;
        score(&preds, split.test.y())
    });
    match outcome {
        Ok((n, r)) => {
            full.nlpd = Some(n);
            full.rmse = Some(r);
        }
        Err(e) => full.fail(e.to_string()),
    }
    if config.record_timing {
        full.wall_clock_seconds = start.elapsed().as_secs_f64();
    }
    rows.push(full);

    let start = Instant::now();
    let mut lin = MetricsRow::blank("linear".into(), "linear".into(), Space::Y, n_train, n_test);
    match LinearModel::fit(&split.train).and_then(|m| score(&m.predict(split.test.x()), split.test.y())) {
        Ok((n, r)) => {
            lin.nlpd = Some(n);
            lin.rmse = Some(r);
        }
        Err(e) => lin.fail(e.to_string()),
    }
    if config.record_timing {
        lin.wall_clock_seconds = start.elapsed().as_secs_f64();
    }
    rows.push(lin);
    rows
}

fn failed_group_rows(
    cells: &[AggregationConfig],
    spec: &PartitionSpec,
    split: &Split,
    swept: Option<f64>,
    e: &Error,
) -> Vec<MetricsRow> {
    cells
        .iter()
        .map(|cell| {
            let mut row = MetricsRow::for_cell(cell, split);
            row.partition = Some(spec.strategy);
            row.points_per_expert = Some(spec.points_per_expert);
            row.swept_value = swept;
            row.fail(format!("pool training failed: {e}"));
            row
        })
        .collect()
}

fn run_on_split(config: &ExperimentConfig, split: &Split, swept: Option<f64>) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for spec in &config.partitions {
        match train_group(config, spec, &split.train) {
            Ok(mut group) => rows.extend(evaluate_cells(config, &mut group, &config.cells, split, swept)),
            Err(e) => rows.extend(failed_group_rows(&config.cells, spec, split, swept, &e)),
        }
    }
    rows
}

fn wants_baselines(config: &ExperimentConfig, split: &Split) -> bool {
    config.baselines && split.train.n() <= config.baseline_cap
}

/// Trains one pool per partition entry and scores every cell on it, followed
/// by the baselines when the training set is small enough.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let split = config.prepare()?;
    let mut rows = run_on_split(config, &split, None);
    if wants_baselines(config, &split) {
        rows.extend(run_baselines(config, &split));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Temperature,
    PointsPerExpert,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" | "T" => Ok(SweepAxis::Temperature),
            "points_per_expert" | "ppe" => Ok(SweepAxis::PointsPerExpert),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Repeats the experiment along one axis. A temperature sweep reuses each
/// trained pool and rewrites the temperature of every softmax cell; a
/// points-per-expert sweep retrains. Baselines run once.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<MetricsRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let split = config.prepare()?;
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Temperature => {
            if let Some(t) = values.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
                return Err(Error::Config(format!(
                    "temperatures must be finite and non-negative, got {t}"
                )));
            }
            for spec in &config.partitions {
                let mut group = match train_group(config, spec, &split.train) {
                    Ok(g) => g,
                    Err(e) => {
                        for &t in values {
                            rows.extend(failed_group_rows(&config.cells, spec, &split, Some(t), &e));
                        }
                        continue;
                    }
                };
                for &t in values {
                    let cells: Vec<AggregationConfig> = config
                        .cells
                        .iter()
                        .map(|c| {
                            let mut c = *c;
                            if let Transform::Softmax { .. } = c.weighting.transform {
                                c.weighting.transform = Transform::Softmax { temperature: t };
                            }
                            c
                        })
                        .collect();
                    rows.extend(evaluate_cells(config, &mut group, &cells, &split, Some(t)));
                }
            }
        }
        SweepAxis::PointsPerExpert => {
            for &v in values {
                if !(v >= 1.0) || v.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "points per expert must be a positive integer, got {v}"
                    )));
                }
                let mut c = config.clone();
                for p in &mut c.partitions {
                    p.points_per_expert = v as usize;
                }
                rows.extend(run_on_split(&c, &split, Some(v)));
            }
        }
    }
    if wants_baselines(config, &split) {
        rows.extend(run_baselines(config, &split));
    }
    Ok(rows)
}
