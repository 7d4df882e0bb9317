//! Experiment harness: data ingestion, splits, synthetic data, metrics,
//! sweeps and reports.

mod data;
mod experiment;
mod model;
mod report;

pub use data::{
    load_csv, read_table, split_standardized, synth_1d, synth_function, synth_grid, Split, Table, SYNTH_GAP,
};
pub use experiment::{
    default_cells, evaluate_cells, make_partition, run_baselines, run_experiment, sweep, train_group, DataSource,
    ExperimentConfig, LinearModel, MetricsRow, PartitionSpec, SweepAxis, TrainedGroup,
};
pub use model::SavedModel;
pub use report::{emit_report, Report, ReportFormat, SweepInfo};

use crate::error::{Error, Result};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "rmse needs equal non-empty inputs, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!((rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }
}
