use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use gpexperts::aggregate::{AggregationConfig, Functional, Method, WeightingSpec};
use gpexperts::bench::{
    emit_report, read_table, run_experiment, sweep, synth_1d, train_group, DataSource, ExperimentConfig, MetricsRow,
    Report, ReportFormat, SavedModel, SweepAxis, SweepInfo,
};
use gpexperts::gp::Dataset;
use gpexperts::Error;

#[derive(Parser)]
#[command(
    name = "gpexperts",
    version,
    about = "Product-of-experts Gaussian process regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an expert pool on a whole CSV file and save it.
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV file; overrides the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
    },
    /// Predict at the rows of a CSV file with a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV with the model's feature columns; extra columns are ignored.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every configured cell and write a report.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the experiment along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `temperature` or `points_per_expert`.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Write the synthetic one-dimensional dataset as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fit { common, .. }
            | Command::Predict { common, .. }
            | Command::Bench { common }
            | Command::Sweep { common, .. }
            | Command::Synth { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> Result<Option<ExperimentConfig>, Error> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(Some(config))
}

fn require_config(common: &Common) -> Result<ExperimentConfig, Error> {
    load_config(common)?.ok_or_else(|| Error::Config("--config is required for this command".into()))
}

fn require_out(common: &Common) -> Result<&Path, Error> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn write_report(
    config: ExperimentConfig,
    info: Option<SweepInfo>,
    rows: Vec<MetricsRow>,
    out: &Path,
) -> Result<bool, Error> {
    let all_failed = rows.iter().all(|r| r.failed);
    for r in &rows {
        match (r.nlpd, r.rmse) {
            (Some(n), Some(e)) => log::info!("{:<28} nlpd {n:8.4}  rmse {e:.4}", r.cell),
            _ => log::warn!("{:<28} failed: {}", r.cell, r.message.as_deref().unwrap_or("")),
        }
    }
    emit_report(&Report::new(config, info, rows), ReportFormat::from_path(out), out)?;
    Ok(all_failed)
}

fn run(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Bench { common } => {
            let config = require_config(&common)?;
            let out = require_out(&common)?;
            let rows = run_experiment(&config)?;
            write_report(config, None, rows, out)
        }
        Command::Sweep { common, axis, values } => {
            let config = require_config(&common)?;
            let out = require_out(&common)?;
            let rows = sweep(&config, axis, &values)?;
            write_report(config, Some(SweepInfo { axis, values }), rows, out)
        }
        Command::Synth { common, n, noise } => {
            let out = require_out(&common)?;
            let seed = common.seed.or(load_config(&common)?.map(|c| c.seed)).unwrap_or(0);
            let d = synth_1d(n, seed, noise)?;
            let mut w = csv::Writer::from_path(out)?;
            w.write_record(["x", "y"])?;
            for i in 0..d.n() {
                w.write_record([d.x()[(i, 0)].to_string(), d.y()[i].to_string()])?;
            }
            w.flush()?;
            Ok(false)
        }
        Command::Fit { common, data, target } => {
            let out = require_out(&common)?;
            let mut config = match load_config(&common)? {
                Some(c) => c,
                None => {
                    let path = data
                        .clone()
                        .ok_or_else(|| Error::Config("fit needs --config or --data".into()))?;
                    let mut c = ExperimentConfig::new(DataSource::Csv { path, target: None });
                    c.seed = common.seed.unwrap_or(0);
                    c
                }
            };
            if let Some(path) = data {
                config.data = DataSource::Csv {
                    path,
                    target: target.clone(),
                };
            }
            let DataSource::Csv { path, target } = &config.data else {
                return Err(Error::Config("fit reads a CSV data source".into()));
            };
            let table = read_table(path, target.as_deref())?;
            let train = Dataset::standardized(&table.x, &table.y)?;
            let group = train_group(&config, &config.partitions[0], &train)?;
            if let Some(f) = group.pool.fit_result() {
                log::info!("trained {} experts, pool lml {:.4}", group.pool.n_experts(), f.lml);
            }
            SavedModel::from_pool(&group.pool, table.feature_names, table.target_name).save(out)?;
            Ok(false)
        }
        Command::Predict { common, model, input } => {
            let out = require_out(&common)?;
            let config = load_config(&common)?;
            let model = SavedModel::load(&model)?;
            let cell = config
                .as_ref()
                .and_then(|c| c.cells.first().copied())
                .unwrap_or_else(|| {
                    AggregationConfig::new(Method::Gpoe, WeightingSpec::softmax(Functional::Variance, 100.0))
                });
            let master_fraction = config.as_ref().and_then(|c| c.master_fraction);
            let seed = common.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
            let x = read_features(&input, &model.feature_names)?;
            let preds = model.predict(&x, &cell, master_fraction, seed)?;
            let mut w = csv::Writer::from_path(out)?;
            w.write_record(["mean", "variance"])?;
            let mut failures = 0;
            for p in &preds {
                match p {
                    Ok(p) => w.write_record([p.mean.to_string(), p.variance.to_string()])?,
                    Err(e) => {
                        failures += 1;
                        log::warn!("{e}");
                        w.write_record(["", ""])?;
                    }
                }
            }
            w.flush()?;
            Ok(failures == preds.len())
        }
    }
}

/// Reads the named feature columns of a CSV file in model order.
fn read_features(path: &Path, names: &[String]) -> Result<DMatrix<f64>, Error> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Config(format!("{} lacks feature column {n:?}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (&c, name) in idx.iter().zip(names) {
            let cell = rec.get(c).unwrap_or("");
            values.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                row: r + 1,
                column: name.clone(),
                message: format!("not a number: {cell:?}"),
            })?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, names.len(), &values))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.command.common().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: numerical failure in every cell");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
