use std::ffi::{CStr, CString};
use std::ptr;

use coda_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(coda_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn problem_round_trip() {
    let name = CString::new("quad").unwrap();
    let params = CString::new("d=3; preset=unit; sigma=0").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { coda_problem_new(name.as_ptr(), params.as_ptr(), &mut p) }, CodaStatus::Ok);
    let mut dims = CodaDims::default();
    assert_eq!(unsafe { coda_problem_dims(p, &mut dims) }, CodaStatus::Ok);
    assert_eq!((dims.d_x, dims.d_y), (3, 3));

    // Unit instance: F = x^T y + |x|^2/2 - |y|^2/2.
    let x = [1.0, 2.0, 0.0];
    let y = [0.5, 0.0, -1.0];
    let mut f = 0.0;
    assert_eq!(unsafe { coda_problem_objective(p, x.as_ptr(), 3, y.as_ptr(), 3, &mut f) }, CodaStatus::Ok);
    assert!((f - (0.5 + 2.5 - 0.625)).abs() < 1e-12);
    let (mut gx, mut gy) = ([0.0; 3], [0.0; 3]);
    let s = unsafe { coda_problem_gradient(p, x.as_ptr(), 3, y.as_ptr(), 3, gx.as_mut_ptr(), gy.as_mut_ptr()) };
    assert_eq!(s, CodaStatus::Ok);
    assert_eq!(gx, [1.5, 2.0, -1.0]);
    assert_eq!(gy, [0.5, 2.0, 1.0]);

    let s = unsafe { coda_problem_objective(p, x.as_ptr(), 2, y.as_ptr(), 3, &mut f) };
    assert_eq!(s, CodaStatus::Shape);
    assert!(last_error().contains("expected lengths"));
    unsafe { coda_problem_free(p) };
}

#[test]
fn error_codes() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { coda_problem_new(ptr::null(), ptr::null(), &mut p) }, CodaStatus::NullArgument);
    let name = CString::new("nope").unwrap();
    assert_eq!(unsafe { coda_problem_new(name.as_ptr(), ptr::null(), &mut p) }, CodaStatus::Validation);
    assert!(last_error().contains("unknown problem"));
    assert!(p.is_null());
    let bad = [0x66u8, 0xff, 0];
    assert_eq!(unsafe { coda_problem_new(bad.as_ptr().cast(), ptr::null(), &mut p) }, CodaStatus::InvalidUtf8);
    unsafe { coda_problem_free(ptr::null_mut()) };
}

#[test]
fn experiment_csv_matches_harness() {
    let text = "algo = coda_primal\nproblem = quad\nT = 12\nseeds = 0..3\nmeasures = tracking_err\nmeasure_every = 4\n";
    let cfg = CString::new(text).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { coda_experiment_run(cfg.as_ptr(), 2, &mut exp) }, CodaStatus::Ok);
    assert_eq!(unsafe { coda_experiment_seeds(exp) }, 3);
    assert_eq!(unsafe { coda_experiment_failed(exp) }, 0);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { coda_experiment_csv(exp, &mut csv) }, CodaStatus::Ok);
    let got = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    unsafe {
        coda_string_free(csv);
        coda_experiment_free(exp);
    }

    let cfg = coda::harness::parse_config(text).unwrap();
    let runs = coda::harness::run_experiment_sequential(&cfg).unwrap();
    let ok: Vec<_> = runs.iter().map(|r| (r.seed, r.result.as_ref().unwrap())).collect();
    assert_eq!(got, coda::harness::csv_string(&ok));

    let bad = CString::new("algo = coda_dual\nproblem = quad\nT = 3\n").unwrap();
    assert_eq!(unsafe { coda_experiment_run(bad.as_ptr(), 0, &mut exp) }, CodaStatus::Validation);
    assert!(last_error().starts_with("line 1"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/coda.h")).unwrap();
    for sym in [
        "coda_problem_new",
        "coda_problem_free",
        "coda_problem_gradient",
        "coda_experiment_run",
        "coda_experiment_csv",
        "coda_string_free",
        "coda_last_error",
        "typedef struct CodaProblem CodaProblem",
        "CODA_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    let v = unsafe { CStr::from_ptr(coda_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
