use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gp::{Dataset, Standardization};

/// A numeric CSV file in raw units, split into features and target.
#[derive(Clone, Debug)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Table {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Reads a header + all-numeric CSV file. The target is the named column,
/// or the last one when `target` is `None`.
pub fn read_table(path: impl AsRef<Path>, target: Option<&str>) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least one feature column and a target column",
            path.display()
        )));
    }
    let target_idx = match target {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column named {name:?} in {}", path.display())))?,
        None => header.len() - 1,
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("not a number: {cell:?}")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if c == target_idx {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Config(format!("{} has no data rows", path.display())));
    }
    let d = header.len() - 1;
    let target_name = header[target_idx].clone();
    let feature_names = header
        .into_iter()
        .enumerate()
        .filter(|(c, _)| *c != target_idx)
        .map(|(_, h)| h)
        .collect();
    Ok(Table {
        feature_names,
        target_name,
        x: DMatrix::from_row_slice(ys.len(), d, &xs),
        y: DVector::from_vec(ys),
    })
}

/// Reads a CSV file and z-scores features and target with the file's own
/// statistics. Experiments use [`split_standardized`] instead so that only
/// training rows inform the scaling.
pub fn load_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<Dataset> {
    let t = read_table(path, target)?;
    Dataset::standardized(&t.x, &t.y)
}

/// Standardized train and test sets sharing the training statistics.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Seeded random train/test split; standardization is fitted on the
/// training rows only.
pub fn split_standardized(x: &DMatrix<f64>, y: &DVector<f64>, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = x.nrows();
    let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
    if n_test >= n {
        return Err(Error::Config(format!(
            "{n} rows are too few for a test fraction of {test_fraction}"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_rows, train_rows) = rows.split_at(n_test);
    let mut train_rows = train_rows.to_vec();
    let mut test_rows = test_rows.to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    let pick = |r: &[usize]| {
        (
            x.select_rows(r),
            DVector::from_iterator(r.len(), r.iter().map(|&i| y[i])),
        )
    };
    let (xtr, ytr) = pick(&train_rows);
    let (xte, yte) = pick(&test_rows);
    let s = Standardization::fit(&xtr, &ytr)?;
    Ok(Split {
        train: Dataset::from_raw(&xtr, &ytr, s.clone())?,
        test: Dataset::from_raw(&xte, &yte, s)?,
    })
}

/// Lower and upper edge of the input interval left without samples.
pub const SYNTH_GAP: (f64, f64) = (0.2, 0.5);

/// The noise-free synthetic target.
pub fn synth_function(x: f64) -> f64 {
    (12.0 * x).sin() + 0.66 * (25.0 * x).cos()
}

/// One-dimensional synthetic data in raw units: inputs uniform on [−1, 1]
/// with no samples in the gap (0.2, 0.5), targets from [`synth_function`]
/// plus Gaussian noise.
pub fn synth_1d(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::invalid(format!(
            "synthetic data needs at least 10 points, got {n}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid(format!(
            "noise_std must be non-negative, got {noise_std}"
        )));
    }
    let (lo, hi) = SYNTH_GAP;
    let support = (lo + 1.0) + (1.0 - hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * support;
        let xi = if u < lo + 1.0 { -1.0 + u } else { hi + (u - (lo + 1.0)) };
        x.push(xi);
        y.push(synth_function(xi) + noise.sample(&mut rng));
    }
    Dataset::new(DMatrix::from_vec(n, 1, x), DVector::from_vec(y))
}

/// Evenly spaced inputs over the whole of [−1, 1], gap included, with noisy
/// targets from [`synth_function`]. Useful for probing predictions where no
/// training data exists.
pub fn synth_grid(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid(format!("grid needs at least 2 points, got {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid(format!(
            "noise_std must be non-negative, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| synth_function(v) + noise.sample(&mut rng)).collect();
    Dataset::new(DMatrix::from_vec(n, 1, x), DVector::from_vec(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn toy_round_trip() {
        let f = write("a,b,t\n1,10,5\n2,20,7\n3,60,9\n");
        let d = load_csv(f.path(), None).unwrap();
        assert_eq!((d.n(), d.dim()), (3, 2));
        let (x, y) = d.raw();
        assert!((x[(2, 1)] - 60.0).abs() < 1e-12);
        assert!((y[1] - 7.0).abs() < 1e-12);
        assert!(d.y().sum().abs() < 1e-12);
    }

    #[test]
    fn target_by_name() {
        let f = write("t,a\n1,2\n3,4\n");
        let t = read_table(f.path(), Some("t")).unwrap();
        assert_eq!(t.feature_names, vec!["a"]);
        assert_eq!(t.y.as_slice(), &[1.0, 3.0]);
        assert!(matches!(read_table(f.path(), Some("zz")), Err(Error::Config(_))));
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let f = write("a,b\n1,2\n3,x\n");
        match read_table(f.path(), None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "b")),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("a,b\n1,\n");
        assert!(matches!(read_table(f.path(), None), Err(Error::Parse { row: 1, .. })));
        let f = write("a,b\n1,2,3\n");
        assert!(matches!(read_table(f.path(), None), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn split_uses_training_statistics() {
        let x = DMatrix::from_fn(50, 2, |i, j| (i * (j + 1)) as f64);
        let y = DVector::from_fn(50, |i, _| i as f64 * 0.5);
        let s = split_standardized(&x, &y, 0.1, 4).unwrap();
        assert_eq!((s.train.n(), s.test.n()), (45, 5));
        assert_eq!(s.train.standardization(), s.test.standardization());
        assert!(s.train.y().sum().abs() < 1e-9);
        let again = split_standardized(&x, &y, 0.1, 4).unwrap();
        assert_eq!(s.test.y(), again.test.y());
        assert!(split_standardized(&x, &y, 1.0, 4).is_err());
    }

    #[test]
    fn synth_respects_gap_and_seed() {
        let d = synth_1d(300, 5, 0.1).unwrap();
        assert_eq!(d.n(), 300);
        assert!(d
            .x()
            .iter()
            .all(|v| (-1.0..=1.0).contains(v) && !(*v > 0.2 && *v < 0.5)));
        assert_eq!(d.y(), synth_1d(300, 5, 0.1).unwrap().y());
        let clean = synth_1d(50, 1, 0.0).unwrap();
        for i in 0..50 {
            assert_eq!(clean.y()[i], synth_function(clean.x()[(i, 0)]));
        }
        assert!(synth_1d(9, 0, 0.1).is_err());
    }

    #[test]
    fn grid_spans_the_gap() {
        let g = synth_grid(101, 0, 0.0).unwrap();
        assert_eq!(g.x()[(0, 0)], -1.0);
        assert_eq!(g.x()[(100, 0)], 1.0);
        assert!(g.x().iter().any(|v| *v > 0.2 && *v < 0.5));
        assert_eq!(g.y()[50], synth_function(0.0));
    }
}
