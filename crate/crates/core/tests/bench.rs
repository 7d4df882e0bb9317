use std::process::Command;

use gpexperts::aggregate::{AggregationConfig, Functional, Method, WeightingSpec};
use gpexperts::bench::{
    emit_report, run_experiment, sweep, DataSource, ExperimentConfig, MetricsRow, PartitionSpec, Report, ReportFormat,
    SweepAxis,
};
use gpexperts::partition::PartitionStrategy;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DataSource::Synthetic { n: 120, noise_std: 0.1 });
    c.partitions = vec![PartitionSpec {
        strategy: PartitionStrategy::Random,
        points_per_expert: 20,
    }];
    c.cells = vec![
        AggregationConfig::new(Method::Gpoe, WeightingSpec::softmax(Functional::Variance, 100.0)),
        AggregationConfig::new(Method::Rbcm, WeightingSpec::softmax(Functional::Variance, 100.0)),
        AggregationConfig::new(Method::Grbcm, WeightingSpec::raw(Functional::DiffEntropy, false)),
    ];
    c.record_timing = false;
    c
}

#[test]
fn normalized_gpoe_and_rbcm_rows_agree() {
    let rows = run_experiment(&small_config()).unwrap();
    assert_eq!(rows.len(), 5);
    let (g, r) = (&rows[0], &rows[1]);
    assert!((g.nlpd.unwrap() - r.nlpd.unwrap()).abs() < 1e-10);
    assert!((g.rmse.unwrap() - r.rmse.unwrap()).abs() < 1e-10);
    assert_eq!(rows[3].cell, "full_gp");
    assert_eq!(rows[4].cell, "linear");
}

#[test]
fn calibrated_cells_beat_the_prior() {
    let rows = run_experiment(&small_config()).unwrap();
    // NLPD of N(0, 1) on standardized targets is at least ½ log 2π
    let prior_nlpd = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for r in rows.iter().take(3) {
        assert!(r.nlpd.unwrap() < prior_nlpd, "{}: {:?}", r.cell, r.nlpd);
    }
}

#[test]
fn full_size_experts_reduce_to_full_gp() {
    let mut c = small_config();
    c.cells.truncate(1);
    let n_train = c.prepare().unwrap().train.n();
    let rows = sweep(&c, SweepAxis::PointsPerExpert, &[n_train as f64]).unwrap();
    let cell = rows.iter().find(|r| r.swept_value.is_some()).unwrap();
    let full = rows.iter().find(|r| r.cell == "full_gp").unwrap();
    assert_eq!(cell.n_experts, 1);
    assert!((cell.nlpd.unwrap() - full.nlpd.unwrap()).abs() < 1e-8);
}

#[test]
fn temperature_sweep_rows() {
    let mut c = small_config();
    c.baselines = false;
    let rows = sweep(&c, SweepAxis::Temperature, &[1.0, 10.0]).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].temperature, Some(1.0));
    assert_eq!(rows[3].temperature, Some(10.0));
    // raw weights are untouched by the sweep
    assert_eq!(rows[2].nlpd, rows[5].nlpd);
    assert!(sweep(&c, SweepAxis::Temperature, &[]).is_err());
}

#[test]
fn reports_round_trip_and_are_stable() {
    let c = small_config();
    let rows = run_experiment(&c).unwrap();
    let report = Report::new(c.clone(), None, rows.clone());
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let csv_path = dir.path().join("r.csv");
    emit_report(&report, ReportFormat::Json, &json).unwrap();
    emit_report(&report, ReportFormat::Csv, &csv_path).unwrap();
    let back: Report = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, report);

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let n_fields = serde_json::to_value(&rows[0]).unwrap().as_object().unwrap().len();
    assert_eq!(reader.headers().unwrap().len(), n_fields);
    let parsed: Vec<MetricsRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(parsed.len(), rows.len());

    let again = Report::new(c.clone(), None, run_experiment(&c).unwrap());
    assert_eq!(
        again.render(ReportFormat::Json).unwrap(),
        report.render(ReportFormat::Json).unwrap()
    );
    assert!(Report::new(c, None, vec![]).render(ReportFormat::Csv).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small_config();
    c.test_fraction = 1.5;
    assert!(run_experiment(&c).is_err());
    let mut c = small_config();
    c.cells.push(AggregationConfig::new(
        Method::Rbcm,
        WeightingSpec::raw(Functional::Variance, false),
    ));
    assert!(run_experiment(&c).is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpexperts"))
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let st = cli()
        .args(["synth", "--n", "80", "--seed", "3", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());

    let cfg = dir.path().join("cfg.json");
    let mut c = small_config();
    c.data = DataSource::Csv {
        path: data.clone(),
        target: None,
    };
    std::fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();

    let report = dir.path().join("out.json");
    let st = cli()
        .arg("bench")
        .arg("--config")
        .arg(&cfg)
        .arg("--threads")
        .arg("2")
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(st.success());
    let r: Report = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.rows.len(), 5);

    let sweep_out = dir.path().join("sweep.csv");
    let st = cli()
        .args(["sweep", "--axis", "temperature", "--values", "1,50", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&sweep_out)
        .status()
        .unwrap();
    assert!(st.success());

    let model = dir.path().join("model.json");
    let st = cli()
        .arg("fit")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert!(st.success());
    let preds = dir.path().join("preds.csv");
    let st = cli()
        .arg("predict")
        .arg("--model")
        .arg(&model)
        .arg("--input")
        .arg(&data)
        .arg("--out")
        .arg(&preds)
        .status()
        .unwrap();
    assert!(st.success());
    let mut reader = csv::Reader::from_path(&preds).unwrap();
    let got: Vec<(f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(got.len(), 80);
    assert!(got.iter().all(|(_, v)| *v > 0.0));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("o.csv");
    let st = cli()
        .arg("bench")
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));

    let csv_path = dir.path().join("d.csv");
    std::fs::write(&csv_path, "a,b\n1,2\nx,3\n").unwrap();
    let mut c = small_config();
    c.data = DataSource::Csv {
        path: csv_path,
        target: None,
    };
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let st = cli()
        .arg("bench")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
}
