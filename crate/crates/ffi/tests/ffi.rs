use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gpexperts_ffi::*;

fn softmax_var(space: GpxSpace) -> GpxAggregation {
    GpxAggregation {
        method: GpxMethod::Gpoe,
        functional: GpxFunctional::Variance,
        transform: GpxTransform::Softmax,
        temperature: 100.0,
        normalized: true,
        space,
        barycenter_mode: GpxBarycenterMode::PaperVarianceAvg,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(gpx_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn toy(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| 10.0 + 5.0 * i as f64 / n as f64).collect();
    let y = x.iter().map(|v| 3.0 * (v - 12.5).sin() + 100.0).collect();
    (x, y)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(gpx_version()) };
    assert_eq!(v.to_str().unwrap(), gpexperts::VERSION);
}

#[test]
fn w2_of_known_pair() {
    let mut out = 0.0;
    // (1 - 0)^2 + (2 - 1)^2
    let s = unsafe { gpx_w2_gaussian(0.0, 1.0, 1.0, 4.0, &mut out) };
    assert_eq!(s, GpxStatus::Ok);
    assert!((out - 2.0).abs() < 1e-12);

    let s = unsafe { gpx_w2_gaussian(0.0, -1.0, 1.0, 4.0, &mut out) };
    assert_eq!(s, GpxStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn aggregate_uniform_poe_matches_precision_sum() {
    let means = [1.0, 3.0];
    let vars = [1.0, 1.0];
    let mut cfg = softmax_var(GpxSpace::F);
    cfg.method = GpxMethod::Poe;
    let (mut m, mut v) = (0.0, 0.0);
    let mut w = [0.0; 2];
    let s = unsafe {
        gpx_aggregate(
            means.as_ptr(),
            vars.as_ptr(),
            2,
            4.0,
            f64::NAN,
            f64::NAN,
            &cfg,
            &mut m,
            &mut v,
            w.as_mut_ptr(),
        )
    };
    assert_eq!(s, GpxStatus::Ok, "{}", last_error());
    assert!((m - 2.0).abs() < 1e-12);
    assert!((v - 0.5).abs() < 1e-12);
    assert_eq!(w, [1.0, 1.0]);
}

#[test]
fn aggregate_rejects_raw_variance() {
    let mut cfg = softmax_var(GpxSpace::F);
    cfg.transform = GpxTransform::Raw;
    let (mut m, mut v) = (0.0, 0.0);
    let s = unsafe {
        gpx_aggregate(
            [0.0].as_ptr(),
            [1.0].as_ptr(),
            1,
            2.0,
            0.0,
            0.0,
            &cfg,
            &mut m,
            &mut v,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, GpxStatus::InvalidArgument);
}

#[test]
fn null_pointers_are_reported() {
    let cfg = softmax_var(GpxSpace::F);
    let mut v = 0.0;
    let s = unsafe {
        gpx_aggregate(
            ptr::null(),
            [1.0].as_ptr(),
            1,
            2.0,
            0.0,
            0.0,
            &cfg,
            ptr::null_mut(),
            &mut v,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, GpxStatus::NullPointer);
    let mut n = 0;
    assert_eq!(
        unsafe { gpx_pool_num_experts(ptr::null(), &mut n) },
        GpxStatus::NullPointer
    );
    unsafe {
        gpx_pool_free(ptr::null_mut());
        gpx_dataset_free(ptr::null_mut());
    }
}

#[test]
fn train_and_predict_in_raw_units() {
    let (x, y) = toy(60);
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { gpx_dataset_new(x.as_ptr(), y.as_ptr(), 60, 1, true, &mut ds) },
        GpxStatus::Ok
    );
    let (mut n, mut d) = (0, 0);
    assert_eq!(unsafe { gpx_dataset_shape(ds, &mut n, &mut d) }, GpxStatus::Ok);
    assert_eq!((n, d), (60, 1));

    let mut pool = ptr::null_mut();
    let s = unsafe { gpx_pool_train(ds, GpxPartition::Kmeans, 20, 7, &mut pool) };
    assert_eq!(s, GpxStatus::Ok, "{}", last_error());
    let mut j = 0;
    assert_eq!(unsafe { gpx_pool_num_experts(pool, &mut j) }, GpxStatus::Ok);
    assert_eq!(j, 3);

    let mut hyp = [0.0; 3];
    assert_eq!(
        unsafe { gpx_pool_hyperparameters(pool, hyp.as_mut_ptr(), 3) },
        GpxStatus::Ok
    );
    assert!(hyp.iter().all(|h| h.is_finite()));
    assert_eq!(
        unsafe { gpx_pool_hyperparameters(pool, hyp.as_mut_ptr(), 2) },
        GpxStatus::InvalidArgument
    );

    let xs = [11.0, 12.5, 14.0];
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for cfg in [softmax_var(GpxSpace::F), softmax_var(GpxSpace::Y)] {
        let s = unsafe { gpx_pool_predict(pool, xs.as_ptr(), 3, 1, &cfg, m.as_mut_ptr(), v.as_mut_ptr()) };
        assert_eq!(s, GpxStatus::Ok, "{}", last_error());
        for i in 0..3 {
            let truth = 3.0 * (xs[i] - 12.5).sin() + 100.0;
            assert!((m[i] - truth).abs() < 0.1, "{} vs {truth}", m[i]);
            assert!(v[i] > 0.0 && v[i] < 1.0);
        }
    }

    let mut grbcm = softmax_var(GpxSpace::F);
    grbcm.method = GpxMethod::Grbcm;
    grbcm.functional = GpxFunctional::DiffEntropy;
    grbcm.transform = GpxTransform::Raw;
    let s = unsafe { gpx_pool_predict(pool, xs.as_ptr(), 3, 1, &grbcm, m.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(s, GpxStatus::InvalidArgument, "grBCM needs build_grbcm first");
    assert_eq!(unsafe { gpx_pool_build_grbcm(pool, 0.0, 1) }, GpxStatus::Ok);
    let s = unsafe { gpx_pool_predict(pool, xs.as_ptr(), 3, 1, &grbcm, m.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(s, GpxStatus::Ok, "{}", last_error());
    assert!(m.iter().all(|v| (v - 100.0).abs() < 4.0));

    let s = unsafe { gpx_pool_predict(pool, xs.as_ptr(), 1, 3, &grbcm, m.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(s, GpxStatus::InvalidArgument);

    unsafe {
        gpx_pool_free(pool);
        gpx_dataset_free(ds);
    }
}

#[test]
fn load_csv_errors() {
    let mut ds = ptr::null_mut();
    let s = unsafe { gpx_dataset_load_csv(c"/nonexistent/file.csv".as_ptr(), ptr::null(), &mut ds) };
    assert_eq!(s, GpxStatus::Io);
    assert!(ds.is_null());

    let dir = std::env::temp_dir().join(format!("gpx-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.csv");
    std::fs::write(&path, "a,b,target\n1,2,3\n2,1,4\n3,5,1\n").unwrap();
    let cpath = std::ffi::CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { gpx_dataset_load_csv(cpath.as_ptr(), c"target".as_ptr(), &mut ds) },
        GpxStatus::Ok
    );
    let (mut n, mut d) = (0, 0);
    unsafe { gpx_dataset_shape(ds, &mut n, &mut d) };
    assert_eq!((n, d), (3, 2));
    unsafe { gpx_dataset_free(ds) };
    assert_eq!(
        unsafe { gpx_dataset_load_csv(cpath.as_ptr(), c"missing".as_ptr(), &mut ds) },
        GpxStatus::InvalidArgument
    );
    std::fs::remove_dir_all(dir).ok();
}

/// Compiles and runs a small C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libgpexperts_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out_dir = std::env::temp_dir().join(format!("gpx-c-{}", std::process::id()));
    std::fs::create_dir_all(&out_dir).unwrap();
    let src = out_dir.join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "gpexperts.h"
int main(void) {
    double m[2] = {1.0, 3.0}, v[2] = {1.0, 1.0}, w[2], mean, var;
    GpxAggregation cfg = {GPX_METHOD_GPOE, GPX_FUNCTIONAL_UNIFORM, GPX_TRANSFORM_RAW, 0.0, true,
                          GPX_SPACE_F, GPX_BARYCENTER_MODE_PAPER_VARIANCE_AVG};
    if (gpx_aggregate(m, v, 2, 4.0, 0.0, 0.0, &cfg, &mean, &var, w) != GPX_STATUS_OK) {
        fprintf(stderr, "%s\n", gpx_last_error_message());
        return 1;
    }
    printf("%s %.6f %.6f %.3f\n", gpx_version(), mean, var, w[0]);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = out_dir.join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping: no C compiler ({cc})");
        return;
    };
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    // Uniform normalized gPoE of N(1,1), N(3,1): mean 2, variance 1.
    assert_eq!(text.trim(), format!("{} 2.000000 1.000000 0.500", gpexperts::VERSION));
    std::fs::remove_dir_all(out_dir).ok();
}
