//! C interface to `gpexperts`.
//!
//! Every function returns a [`GpxStatus`]; on failure a description is
//! available from [`gpx_last_error_message`] on the same thread. Objects are
//! opaque handles that must be released with their `_free` function. Matrices
//! are dense and row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gpexperts::aggregate::{
    aggregate, AggregationConfig, BarycenterMode, ExpertSlice, Functional, Method, Transform, WeightingSpec,
};
use gpexperts::bench::read_table;
use gpexperts::ensemble::{train_pool, ExpertPool};
use gpexperts::gp::{default_init, Dataset, Space, Standardization};
use gpexperts::optim::OptimizerOptions;
use gpexperts::partition::{kmeans_partition, random_partition};
use gpexperts::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericalFailure = 2,
    NullPointer = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxMethod {
    Poe = 0,
    Gpoe = 1,
    Bcm = 2,
    Rbcm = 3,
    Grbcm = 4,
    Barycenter = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxFunctional {
    Uniform = 0,
    Variance = 1,
    DiffEntropy = 2,
    Wasserstein = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxTransform {
    Softmax = 0,
    Raw = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxSpace {
    F = 0,
    Y = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxBarycenterMode {
    PaperVarianceAvg = 0,
    ExactW2 = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpxPartition {
    Random = 0,
    Kmeans = 1,
}

/// Aggregation settings. `temperature` is read only for the softmax
/// transform; softmax weights are always normalized.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GpxAggregation {
    pub method: GpxMethod,
    pub functional: GpxFunctional,
    pub transform: GpxTransform,
    pub temperature: f64,
    pub normalized: bool,
    pub space: GpxSpace,
    pub barycenter_mode: GpxBarycenterMode,
}

/// Training data together with its standardization record.
pub struct GpxDataset(Dataset);

/// A trained pool of experts.
pub struct GpxPool(ExpertPool);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidArgument(msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GpxStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            GpxStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            match e.root() {
                Error::Numerical(_) => GpxStatus::NumericalFailure,
                Error::Io(_) | Error::Csv(_) | Error::Parse { .. } => GpxStatus::Io,
                _ => GpxStatus::InvalidArgument,
            }
        }
        Err(_) => {
            set_error("internal panic");
            GpxStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

impl GpxAggregation {
    fn to_config(self) -> AggregationConfig {
        let method = match self.method {
            GpxMethod::Poe => Method::Poe,
            GpxMethod::Gpoe => Method::Gpoe,
            GpxMethod::Bcm => Method::Bcm,
            GpxMethod::Rbcm => Method::Rbcm,
            GpxMethod::Grbcm => Method::Grbcm,
            GpxMethod::Barycenter => Method::Barycenter,
        };
        let functional = match self.functional {
            GpxFunctional::Uniform => Functional::Uniform,
            GpxFunctional::Variance => Functional::Variance,
            GpxFunctional::DiffEntropy => Functional::DiffEntropy,
            GpxFunctional::Wasserstein => Functional::Wasserstein,
        };
        let transform = match self.transform {
            GpxTransform::Softmax => Transform::Softmax {
                temperature: self.temperature,
            },
            GpxTransform::Raw => Transform::Raw,
        };
        AggregationConfig {
            method,
            weighting: WeightingSpec {
                functional,
                transform,
                normalized: self.normalized,
            },
            space: match self.space {
                GpxSpace::F => Space::F,
                GpxSpace::Y => Space::Y,
            },
            barycenter_mode: match self.barycenter_mode {
                GpxBarycenterMode::PaperVarianceAvg => BarycenterMode::PaperVarianceAvg,
                GpxBarycenterMode::ExactW2 => BarycenterMode::ExactW2,
            },
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpx_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Message for the most recent failure on this thread; empty after success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn gpx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `n` rows of `d` features (`x`, row-major) and `n` targets into a
/// new dataset. With `standardize`, features and targets are z-scored and
/// the scaling is remembered for prediction.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn gpx_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    standardize: bool,
    out: *mut *mut GpxDataset,
) -> GpxStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let xs = slice(x, len, "x")?;
        let ys = slice(y, n, "y")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let xm = DMatrix::from_row_slice(n, d, xs);
        let yv = DVector::from_column_slice(ys);
        let data = if standardize {
            Dataset::standardized(&xm, &yv)?
        } else {
            Dataset::new(xm, yv)?
        };
        put(out, Box::into_raw(Box::new(GpxDataset(data))), "out")
    })
}

/// Reads a header + numeric CSV file and standardizes it. `target` names the
/// target column; pass NULL for the last column.
///
/// # Safety
/// `path` and a non-null `target` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gpx_dataset_load_csv(
    path: *const c_char,
    target: *const c_char,
    out: *mut *mut GpxDataset,
) -> GpxStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let target = if target.is_null() {
            None
        } else {
            Some(
                CStr::from_ptr(target)
                    .to_str()
                    .map_err(|_| invalid("target is not UTF-8"))?,
            )
        };
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t = read_table(path, target)?;
        let data = Dataset::standardized(&t.x, &t.y)?;
        put(out, Box::into_raw(Box::new(GpxDataset(data))), "out")
    })
}

/// # Safety
/// `dataset` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpx_dataset_free(dataset: *mut GpxDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// Pointers must be valid as documented on [`gpx_dataset_new`].
#[no_mangle]
pub unsafe extern "C" fn gpx_dataset_shape(dataset: *const GpxDataset, n: *mut usize, d: *mut usize) -> GpxStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.0;
        put(n, ds.n(), "n")?;
        put(d, ds.dim(), "d")
    })
}

/// Partitions the dataset and trains a pool of experts with shared
/// hyperparameters using default optimizer settings.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_train(
    dataset: *const GpxDataset,
    strategy: GpxPartition,
    points_per_expert: usize,
    seed: u64,
    out: *mut *mut GpxPool,
) -> GpxStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let partition = match strategy {
            GpxPartition::Random => random_partition(ds.n(), points_per_expert, seed)?,
            GpxPartition::Kmeans => kmeans_partition(ds.x(), points_per_expert, seed, 100)?,
        };
        let pool = train_pool(ds, &partition, &default_init(ds), &OptimizerOptions::default())?;
        put(out, Box::into_raw(Box::new(GpxPool(pool))), "out")
    })
}

/// # Safety
/// `pool` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_free(pool: *mut GpxPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// # Safety
/// `pool` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_num_experts(pool: *const GpxPool, out: *mut usize) -> GpxStatus {
    guard(|| put(out, borrow(pool, "pool")?.0.n_experts(), "out"))
}

/// Writes the shared log-space hyperparameters `[log ℓ_1..d, log σ_f, log σ_y]`
/// into `out`, which must hold `len = d + 2` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_hyperparameters(pool: *const GpxPool, out: *mut f64, len: usize) -> GpxStatus {
    guard(|| {
        let v = borrow(pool, "pool")?.0.hyperparameters().to_vec();
        if len != v.len() {
            return Err(invalid(format!("expected room for {} values, got {len}", v.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Prepares grBCM. A `master_fraction` of zero or less selects the default
/// master size (the mean expert size).
///
/// # Safety
/// `pool` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_build_grbcm(pool: *mut GpxPool, master_fraction: f64, seed: u64) -> GpxStatus {
    guard(|| {
        let p = &mut pool.as_mut().ok_or(Failure::Null("pool"))?.0;
        let fraction = (master_fraction > 0.0).then_some(master_fraction);
        p.build_grbcm(fraction, seed)?;
        Ok(())
    })
}

/// Aggregated predictions of observations y at `t` inputs (`x`, row-major
/// `t × d`). Inputs and outputs are in the units the dataset was created
/// with; standardization is applied and undone internally. Points that fail
/// to aggregate get NaN and make the call return the first failure's status.
///
/// # Safety
/// `x` must hold `t * d` doubles; `out_mean` and `out_var` `t` doubles each.
#[no_mangle]
pub unsafe extern "C" fn gpx_pool_predict(
    pool: *const GpxPool,
    x: *const f64,
    t: usize,
    d: usize,
    config: *const GpxAggregation,
    out_mean: *mut f64,
    out_var: *mut f64,
) -> GpxStatus {
    guard(|| {
        let p = &borrow(pool, "pool")?.0;
        let cfg = borrow(config, "config")?.to_config();
        let len = t.checked_mul(d).ok_or_else(|| invalid("t * d overflows"))?;
        let xs = slice(x, len, "x")?;
        let means = slice_mut(out_mean, t, "out_mean")?;
        let vars = slice_mut(out_var, t, "out_var")?;
        let s: &Standardization = p.data().standardization();
        if d != s.dim() {
            return Err(invalid(format!("inputs have {d} columns, pool expects {}", s.dim())));
        }
        let xm = s.apply_features(&DMatrix::from_row_slice(t, d, xs));
        let noise = p.hyperparameters().noise_variance();
        let points = if cfg.method == Method::Grbcm {
            let g = p.predict_grbcm(&xm, cfg.space)?;
            gpexperts::aggregate::aggregate_batch(&cfg, &g.children, Some((&g.master_means, &g.master_variances)))?
        } else {
            gpexperts::aggregate::aggregate_batch(&cfg, &p.predict_experts(&xm, cfg.space)?, None)?
        };
        let mut first = None;
        for (i, r) in points.into_iter().enumerate() {
            match r {
                Ok(a) => {
                    let q = a.prediction.lift(noise);
                    means[i] = s.invert_target(q.mean);
                    vars[i] = q.variance * s.target_std * s.target_std;
                }
                Err(e) => {
                    means[i] = f64::NAN;
                    vars[i] = f64::NAN;
                    first.get_or_insert(e);
                }
            }
        }
        match first {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// Aggregates `j` expert predictions at one test point. For grBCM the arrays
/// hold the augmented children and `master_mean`/`master_var` the master
/// prediction; other methods ignore them. `out_weights` may be NULL, else it
/// receives the `j` weights used.
///
/// # Safety
/// `means` and `vars` must hold `j` doubles; a non-null `out_weights` `j` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpx_aggregate(
    means: *const f64,
    vars: *const f64,
    j: usize,
    prior_var: f64,
    master_mean: f64,
    master_var: f64,
    config: *const GpxAggregation,
    out_mean: *mut f64,
    out_var: *mut f64,
    out_weights: *mut f64,
) -> GpxStatus {
    guard(|| {
        let cfg = borrow(config, "config")?.to_config();
        let m = slice(means, j, "means")?.to_vec();
        let v = slice(vars, j, "vars")?.to_vec();
        let mut s = ExpertSlice::new(m, v, prior_var, cfg.space)?;
        if cfg.method == Method::Grbcm {
            s = s.with_master(master_mean, master_var)?;
        }
        let a = aggregate(&cfg, &s)?;
        put(out_mean, a.prediction.mean, "out_mean")?;
        put(out_var, a.prediction.variance, "out_var")?;
        if !out_weights.is_null() {
            slice_mut(out_weights, j, "out_weights")?.copy_from_slice(&a.weights);
        }
        Ok(())
    })
}

/// Squared 2-Wasserstein distance between N(m1, v1) and N(m2, v2).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpx_w2_gaussian(m1: f64, v1: f64, m2: f64, v2: f64, out: *mut f64) -> GpxStatus {
    guard(|| put(out, gpexperts::aggregate::w2_gaussian(m1, v1, m2, v2)?, "out"))
}
