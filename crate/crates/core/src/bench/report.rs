use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentConfig, MetricsRow, SweepAxis};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` selects JSON; anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Rows plus the provenance needed to reproduce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub library: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub sweep: Option<SweepInfo>,
    pub rows: Vec<MetricsRow>,
}

impl Report {
    pub fn new(config: ExperimentConfig, sweep: Option<SweepInfo>, rows: Vec<MetricsRow>) -> Self {
        Report {
            library: env!("CARGO_PKG_NAME").to_string(),
            version: crate::VERSION.to_string(),
            config,
            sweep,
            rows,
        }
    }

    /// Serializes the report. CSV holds only the rows, one line each.
    pub fn render(&self, format: ReportFormat) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::invalid("report has no rows"));
        }
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self)?;
                s.push('\n');
                Ok(s)
            }
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                for row in &self.rows {
                    w.serialize(row)?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
            }
        }
    }
}

pub fn emit_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = report.render(format)?;
    std::fs::write(path, text)?;
    Ok(())
}
