use std::ffi::CStr;
use std::ptr;

use cardiosep_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut CsMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cs_matrix_new(rows, cols, data.as_ptr(), &mut m) }, CsStatus::Ok);
    m
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { cs_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(s.len(), n.min(255));
    s
}

#[test]
fn matrix_round_trip_and_errors() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let m = matrix(2, 3, &data);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { cs_matrix_shape(m, &mut r, &mut c) }, CsStatus::Ok);
    assert_eq!((r, c), (2, 3));
    let mut out = [0.0; 6];
    assert_eq!(unsafe { cs_matrix_copy_data(m, out.as_mut_ptr(), 6) }, CsStatus::Ok);
    assert_eq!(out, data);
    assert_eq!(unsafe { cs_matrix_copy_data(m, out.as_mut_ptr(), 5) }, CsStatus::BufferTooSmall);
    unsafe { cs_matrix_free(m) };

    let mut bad = ptr::null_mut();
    let neg = [1.0, -1.0];
    assert_eq!(unsafe { cs_matrix_new(1, 2, neg.as_ptr(), &mut bad) }, CsStatus::InvalidArgument);
    assert!(bad.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { cs_matrix_new(1, 2, ptr::null(), &mut bad) }, CsStatus::NullPointer);
    assert!(last_error().contains("data"));
    unsafe { cs_matrix_free(ptr::null_mut()) };
}

#[test]
fn factorize_through_handles() {
    let a = [1.0, 0.2, 0.3, 1.0, 0.5, 0.5];
    let x = [1.0, 0.0, 2.0, 1.0, 0.5, 1.0, 0.0, 3.0];
    let y: Vec<f64> = (0..3)
        .flat_map(|i| (0..4).map(move |j| a[2 * i] * x[j] + a[2 * i + 1] * x[4 + j]))
        .collect();
    let ym = matrix(3, 4, &y);
    let mut cfg = cs_nmf_config_default();
    cfg.max_iter = 3000;
    cfg.rel_tol = 1e-14;
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { cs_factorize(ym, &cfg, &mut f) }, CsStatus::Ok);

    let (mut iters, mut converged, mut len) = (0, false, 0);
    assert_eq!(unsafe { cs_factorization_summary(f, &mut iters, &mut converged, &mut len) }, CsStatus::Ok);
    assert_eq!(len, iters + 1);
    let mut trace = vec![0.0; len];
    assert_eq!(unsafe { cs_factorization_cost_trace(f, trace.as_mut_ptr(), len) }, CsStatus::Ok);
    assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));

    let (mut am, mut xm) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { cs_factorization_basis(f, &mut am) }, CsStatus::Ok);
    assert_eq!(unsafe { cs_factorization_activations(f, &mut xm) }, CsStatus::Ok);
    let mut d = f64::NAN;
    assert_eq!(unsafe { cs_alpha_divergence(ym, am, xm, cfg.alpha, cfg.epsilon_floor, &mut d) }, CsStatus::Ok);
    assert_eq!(d, *trace.last().unwrap());
    assert!(d < 1e-6, "{d}");

    assert_eq!(unsafe { cs_alpha_divergence(ym, xm, am, 1.0, 1e-12, &mut d) }, CsStatus::DimensionMismatch);
    cfg.rank = 0;
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { cs_factorize(ym, &cfg, &mut g) }, CsStatus::InvalidArgument);
    unsafe {
        cs_matrix_free(am);
        cs_matrix_free(xm);
        cs_matrix_free(ym);
        cs_factorization_free(f);
    }
}

#[test]
fn bss_eval_closed_forms() {
    let s1 = [1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
    let s2 = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, -1.0];
    let refs: Vec<f64> = s1.iter().chain(&s2).copied().collect();
    let mut out = CsBssScores { sdr_db: 0.0, sir_db: 0.0, sar_db: 0.0 };
    assert_eq!(unsafe { cs_bss_eval(s1.as_ptr(), refs.as_ptr(), 8, 2, 0, &mut out) }, CsStatus::Ok);
    assert_eq!(out.sdr_db, f64::INFINITY);
    let both: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
    assert_eq!(unsafe { cs_bss_eval(both.as_ptr(), refs.as_ptr(), 8, 2, 0, &mut out) }, CsStatus::Ok);
    assert!(out.sir_db.abs() < 1e-12);
    let dup: Vec<f64> = s1.iter().chain(&s1).copied().collect();
    assert_eq!(
        unsafe { cs_bss_eval(s1.as_ptr(), dup.as_ptr(), 8, 2, 0, &mut out) },
        CsStatus::DependentReferences
    );
    assert_eq!(unsafe { cs_bss_eval(s1.as_ptr(), refs.as_ptr(), 8, 2, 5, &mut out) }, CsStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/cardiosep.h");
    for name in [
        "cs_last_error_message",
        "cs_nmf_config_default",
        "cs_matrix_new",
        "cs_matrix_free",
        "cs_matrix_shape",
        "cs_matrix_copy_data",
        "cs_alpha_divergence",
        "cs_factorize",
        "cs_factorization_free",
        "cs_factorization_basis",
        "cs_factorization_activations",
        "cs_factorization_summary",
        "cs_factorization_cost_trace",
        "cs_bss_eval",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name}");
    }
}
