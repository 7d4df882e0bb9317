//! Pools of exact GP experts sharing one set of hyperparameters.
//!
//! Training maximizes the sum of per-expert log marginal likelihoods. Expert
//! terms are evaluated in parallel and summed serially in expert order, so
//! results do not depend on the number of worker threads.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{self, Dataset, FitResult, Space, TrainedGP};
use crate::numerics::Hyperparameters;
use crate::optim::OptimizerOptions;
use crate::partition::Partition;

fn tag<T>(index: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Expert {
        index,
        source: Box::new(e),
    })
}

/// Sum of per-expert log marginal likelihoods.
pub fn pool_lml(datasets: &[Dataset], hyp: &Hyperparameters) -> Result<f64> {
    let terms: Vec<Result<f64>> = datasets
        .par_iter()
        .enumerate()
        .map(|(j, d)| tag(j, gp::log_marginal_likelihood(d, hyp)))
        .collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// Pool objective and its gradient in log-space parameters.
pub fn pool_lml_and_gradient(datasets: &[Dataset], hyp: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    if datasets.is_empty() {
        return Err(Error::invalid("pool has no experts"));
    }
    let terms: Vec<Result<(f64, Vec<f64>)>> = datasets
        .par_iter()
        .enumerate()
        .map(|(j, d)| tag(j, gp::lml_and_gradient(d, hyp)))
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; hyp.n_params()];
    for t in terms {
        let (l, g) = t?;
        total += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((total, grad))
}

/// Master expert plus augmented children `D^c ∪ D^(j)`.
#[derive(Clone, Debug)]
pub struct Grbcm {
    master: TrainedGP,
    children: Vec<TrainedGP>,
    master_rows: Vec<usize>,
    child_sizes: Vec<usize>,
}

impl Grbcm {
    pub fn master(&self) -> &TrainedGP {
        &self.master
    }

    pub fn children(&self) -> &[TrainedGP] {
        &self.children
    }

    pub fn master_rows(&self) -> &[usize] {
        &self.master_rows
    }

    pub fn child_sizes(&self) -> &[usize] {
        &self.child_sizes
    }
}

/// Experts trained on disjoint subsets with shared hyperparameters.
#[derive(Clone, Debug)]
pub struct ExpertPool {
    data: Dataset,
    partition: Partition,
    hyp: Hyperparameters,
    fit: Option<FitResult>,
    experts: Vec<TrainedGP>,
    grbcm: Option<Grbcm>,
}

/// Per-expert predictions on a test set: `means` and `variances` are t × J.
#[derive(Clone, Debug)]
pub struct ExpertPredictions {
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
    /// Prior variance at each test point, in the same space as `variances`.
    pub prior_variances: Vec<f64>,
    pub space: Space,
}

impl ExpertPredictions {
    pub fn n_points(&self) -> usize {
        self.means.nrows()
    }

    pub fn n_experts(&self) -> usize {
        self.means.ncols()
    }

    pub fn row_means(&self, i: usize) -> Vec<f64> {
        self.means.row(i).iter().copied().collect()
    }

    pub fn row_variances(&self, i: usize) -> Vec<f64> {
        self.variances.row(i).iter().copied().collect()
    }
}

/// Master and augmented-children predictions for grBCM.
#[derive(Clone, Debug)]
pub struct GrbcmPredictions {
    pub master_means: Vec<f64>,
    pub master_variances: Vec<f64>,
    pub children: ExpertPredictions,
}

fn predict_all(models: &[TrainedGP], x_star: &DMatrix<f64>, space: Space) -> Result<ExpertPredictions> {
    let cols: Vec<Result<Vec<gp::GaussianPrediction>>> = models
        .par_iter()
        .enumerate()
        .map(|(j, m)| tag(j, m.predict_batch(x_star, space)))
        .collect();
    let t = x_star.nrows();
    let mut means = DMatrix::zeros(t, models.len());
    let mut variances = DMatrix::zeros(t, models.len());
    for (j, col) in cols.into_iter().enumerate() {
        for (i, p) in col?.into_iter().enumerate() {
            means[(i, j)] = p.mean;
            variances[(i, j)] = p.variance;
        }
    }
    let prior_variances = (0..t)
        .map(|i| {
            let point: Vec<f64> = x_star.row(i).iter().copied().collect();
            models[0].prior_variance(&point, space)
        })
        .collect();
    Ok(ExpertPredictions {
        means,
        variances,
        prior_variances,
        space,
    })
}

fn subsets(data: &Dataset, partition: &Partition) -> Result<Vec<Dataset>> {
    if partition.n_rows() != data.n() {
        return Err(Error::invalid(format!(
            "partition covers {} rows but dataset has {}",
            partition.n_rows(),
            data.n()
        )));
    }
    partition.members().iter().map(|rows| data.subset(rows)).collect()
}

/// Optimizes the shared hyperparameters of the pool objective, then
/// factorizes every expert once at the optimum.
pub fn train_pool(
    data: &Dataset,
    partition: &Partition,
    init: &Hyperparameters,
    opts: &OptimizerOptions,
) -> Result<ExpertPool> {
    let sets = subsets(data, partition)?;
    if init.dim() != data.dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features but hyperparameters have {} lengthscales",
            data.dim(),
            init.dim()
        )));
    }
    let fit = gp::maximize(|h| pool_lml_and_gradient(&sets, h), init, opts)?;
    let mut pool = ExpertPool::from_subsets(data, partition, &sets, &fit.hyperparameters)?;
    pool.fit = Some(fit);
    Ok(pool)
}

impl ExpertPool {
    /// Builds a pool with fixed hyperparameters, skipping optimization.
    pub fn with_hyperparameters(data: &Dataset, partition: &Partition, hyp: &Hyperparameters) -> Result<Self> {
        hyp.validate()?;
        let sets = subsets(data, partition)?;
        ExpertPool::from_subsets(data, partition, &sets, hyp)
    }

    fn from_subsets(data: &Dataset, partition: &Partition, sets: &[Dataset], hyp: &Hyperparameters) -> Result<Self> {
        let experts: Vec<Result<TrainedGP>> = sets
            .par_iter()
            .enumerate()
            .map(|(j, d)| tag(j, TrainedGP::new(d, hyp)))
            .collect();
        Ok(ExpertPool {
            data: data.clone(),
            partition: partition.clone(),
            hyp: hyp.clone(),
            fit: None,
            experts: experts.into_iter().collect::<Result<_>>()?,
            grbcm: None,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    /// Optimization record; absent for pools built with fixed hyperparameters.
    pub fn fit_result(&self) -> Option<&FitResult> {
        self.fit.as_ref()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn experts(&self) -> &[TrainedGP] {
        &self.experts
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn expert_sizes(&self) -> Vec<usize> {
        self.experts.iter().map(|e| e.n()).collect()
    }

    /// Number of factorizations (experts, master, children) that needed jitter.
    pub fn jitter_events(&self) -> usize {
        let mut count = self.experts.iter().filter(|e| e.factor().jitter() > 0.0).count();
        if let Some(g) = &self.grbcm {
            count += std::iter::once(&g.master)
                .chain(&g.children)
                .filter(|e| e.factor().jitter() > 0.0)
                .count();
        }
        count
    }

    pub fn grbcm(&self) -> Option<&Grbcm> {
        self.grbcm.as_ref()
    }

    /// Builds grBCM's master and augmented children with the pool's
    /// hyperparameters. The master is a seeded uniform sample of the training
    /// rows of size `master_fraction · n`, capped at the mean expert size; with
    /// `None` it is exactly the mean expert size. Children are formed from
    /// experts `1..J`; expert 0's own rows enter only if sampled into the master.
    pub fn build_grbcm(&mut self, master_fraction: Option<f64>, seed: u64) -> Result<()> {
        let j = self.n_experts();
        if j < 2 {
            return Err(Error::invalid("grBCM needs at least two experts"));
        }
        let n = self.data.n();
        let mean_size = (n as f64 / j as f64).round() as usize;
        let size = match master_fraction {
            Some(f) if !(f > 0.0 && f < 1.0) => {
                return Err(Error::invalid(format!("master_fraction must lie in (0, 1), got {f}")))
            }
            Some(f) => ((f * n as f64).round() as usize).min(mean_size),
            None => mean_size,
        };
        if size == 0 {
            return Err(Error::invalid("grBCM master set would be empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut master_rows = sample(&mut rng, n, size).into_vec();
        master_rows.sort_unstable();
        let mut in_master = vec![false; n];
        for &r in &master_rows {
            in_master[r] = true;
        }

        let members = self.partition.members();
        let child_rows: Vec<Vec<usize>> = members[1..]
            .iter()
            .map(|rows| {
                let mut all = master_rows.clone();
                all.extend(rows.iter().copied().filter(|r| !in_master[*r]));
                all
            })
            .collect();

        let hyp = &self.hyp;
        let data = &self.data;
        let master = TrainedGP::new(&data.subset(&master_rows)?, hyp)?;
        let children: Vec<Result<TrainedGP>> = child_rows
            .par_iter()
            .enumerate()
            .map(|(c, rows)| tag(c + 1, data.subset(rows).and_then(|d| TrainedGP::new(&d, hyp))))
            .collect();
        self.grbcm = Some(Grbcm {
            master,
            children: children.into_iter().collect::<Result<_>>()?,
            master_rows,
            child_sizes: child_rows.iter().map(Vec::len).collect(),
        });
        Ok(())
    }

    /// Predictions of every expert at every row of `x_star`.
    pub fn predict_experts(&self, x_star: &DMatrix<f64>, space: Space) -> Result<ExpertPredictions> {
        predict_all(&self.experts, x_star, space)
    }

    /// Master and children predictions; requires [`ExpertPool::build_grbcm`].
    pub fn predict_grbcm(&self, x_star: &DMatrix<f64>, space: Space) -> Result<GrbcmPredictions> {
        let g = self
            .grbcm
            .as_ref()
            .ok_or_else(|| Error::invalid("grBCM structure has not been built for this pool"))?;
        let master = g.master.predict_batch(x_star, space)?;
        Ok(GrbcmPredictions {
            master_means: master.iter().map(|p| p.mean).collect(),
            master_variances: master.iter().map(|p| p.variance).collect(),
            children: predict_all(&g.children, x_star, space)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::random_partition;
    use nalgebra::DVector;

    fn toy(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| (3.0 * x[(i, 0)]).sin() + 0.1 * ((i * 7 % 5) as f64 - 2.0));
        Dataset::new(x, y).unwrap()
    }

    fn hyp() -> Hyperparameters {
        Hyperparameters::from_natural(&[0.4], 1.0, 0.2).unwrap()
    }

    #[test]
    fn single_expert_matches_full_lml() {
        let d = toy(25);
        let full = gp::log_marginal_likelihood(&d, &hyp()).unwrap();
        let pooled = pool_lml(std::slice::from_ref(&d), &hyp()).unwrap();
        assert!((full - pooled).abs() <= 1e-10 * full.abs().max(1.0));
    }

    #[test]
    fn pool_lml_is_sum_of_terms() {
        let d = toy(30);
        let p = random_partition(30, 15, 3).unwrap();
        let sets: Vec<Dataset> = p.members().iter().map(|r| d.subset(r).unwrap()).collect();
        let expected: f64 = sets
            .iter()
            .map(|s| gp::log_marginal_likelihood(s, &hyp()).unwrap())
            .sum();
        let got = pool_lml(&sets, &hyp()).unwrap();
        assert!((expected - got).abs() < 1e-10);
        let rev: Vec<Dataset> = sets.iter().rev().cloned().collect();
        assert!((pool_lml(&rev, &hyp()).unwrap() - got).abs() < 1e-10);
    }

    #[test]
    fn grbcm_children_contain_master() {
        let d = toy(40);
        let p = random_partition(40, 10, 1).unwrap();
        let mut pool = ExpertPool::with_hyperparameters(&d, &p, &hyp()).unwrap();
        pool.build_grbcm(None, 9).unwrap();
        let g = pool.grbcm().unwrap();
        assert_eq!(g.master_rows().len(), 10);
        assert_eq!(g.children().len(), 3);
        let members = p.members();
        for (c, size) in g.child_sizes().iter().enumerate() {
            let overlap = members[c + 1].iter().filter(|r| g.master_rows().contains(r)).count();
            assert_eq!(*size, 10 + members[c + 1].len() - overlap);
        }
    }

    #[test]
    fn grbcm_rejects_degenerate_inputs() {
        let d = toy(20);
        let one = random_partition(20, 20, 0).unwrap();
        let mut pool = ExpertPool::with_hyperparameters(&d, &one, &hyp()).unwrap();
        assert!(pool.build_grbcm(None, 0).is_err());
        let two = random_partition(20, 10, 0).unwrap();
        let mut pool = ExpertPool::with_hyperparameters(&d, &two, &hyp()).unwrap();
        assert!(pool.build_grbcm(Some(1.5), 0).is_err());
        assert!(pool.build_grbcm(Some(0.0), 0).is_err());
        assert!(pool.predict_grbcm(&DMatrix::zeros(1, 1), Space::F).is_err());
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let d = toy(30);
        let p = random_partition(30, 10, 0).unwrap();
        let pool = ExpertPool::with_hyperparameters(&d, &p, &hyp()).unwrap();
        let preds = pool
            .predict_experts(&DMatrix::from_element(1, 1, 50.0), Space::F)
            .unwrap();
        for j in 0..3 {
            assert!(preds.means[(0, j)].abs() < 1e-12);
            assert!((preds.variances[(0, j)] - 1.0).abs() < 1e-12);
        }
        assert!((preds.prior_variances[0] - 1.0).abs() < 1e-12);
    }
}
