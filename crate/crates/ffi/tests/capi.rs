use std::ffi::CStr;
use std::ptr;

use modelrisk::heston::{heston_european_call, HestonParams, OptionSpec, StateAt};
use modelrisk::mc::{apply_rule_1d, HestonSimulator};
use modelrisk::pde1d::{price_american_put_1d, ConstantVol, Solver1DConfig};
use modelrisk_ffi::*;

fn base() -> MrHestonParams {
    let mut p = MrHestonParams { kappa: 0.0, theta: 0.0, sigma_v: 0.0, rho: 0.0, r: 0.0, s0: 0.0, v0: 0.0 };
    assert_eq!(unsafe { mr_heston_base_case(&mut p) }, MrStatus::Ok);
    p
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe { mr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn call_price_matches_core() {
    let p = base();
    let mut c = 0.0;
    assert_eq!(unsafe { mr_heston_call_price(&p, 10.0, 1.0, &mut c) }, MrStatus::Ok);
    let hp = HestonParams::base_case();
    let direct = heston_european_call(&hp, &OptionSpec::european_call(10.0, 1.0), StateAt { t: 0.0, s: 10.0, v: 0.0625 }).unwrap();
    assert_eq!(c, direct);
    let mut iv = 0.0;
    assert_eq!(unsafe { mr_implied_vol(c, 0.1, 10.0, 10.0, 1.0, &mut iv) }, MrStatus::Ok);
    assert!((iv - 0.3699704).abs() < 1e-6, "{iv}");
    assert_eq!(unsafe { mr_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn error_codes_and_messages() {
    let p = base();
    assert_eq!(unsafe { mr_heston_call_price(ptr::null(), 10.0, 1.0, ptr::null_mut()) }, MrStatus::NullPointer);
    assert!(last_error().contains("params"));

    let mut c = 0.0;
    assert_eq!(unsafe { mr_heston_call_price(&p, 10.0, -1.0, &mut c) }, MrStatus::InvalidInput);
    let n = unsafe { mr_last_error_message(ptr::null_mut(), 0) };
    assert!(n > 0);
    let mut small = [1 as std::ffi::c_char; 8];
    assert_eq!(unsafe { mr_last_error_message(small.as_mut_ptr(), small.len()) }, n);
    assert_eq!(small[7], 0);

    let bad = MrHestonParams { kappa: -1.0, ..p };
    assert_eq!(unsafe { mr_heston_call_price(&bad, 10.0, 1.0, &mut c) }, MrStatus::InvalidInput);

    // price above the spot has no implied vol
    let mut iv = 0.0;
    assert_eq!(unsafe { mr_implied_vol(11.0, 0.1, 10.0, 10.0, 1.0, &mut iv) }, MrStatus::InvalidInput);

    // free functions accept null
    unsafe {
        mr_quotes_free(ptr::null_mut());
        mr_local_vol_free(ptr::null_mut());
        mr_boundary_1d_free(ptr::null_mut());
        mr_boundary_2d_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(mr_version()) }.to_bytes().is_empty());
}

#[test]
fn quotes_and_calibration() {
    let p = base();
    let strikes: Vec<f64> = (0..25).map(|i| 7.0 + 0.25 * i as f64).collect();
    let mats = [0.25, 0.5, 0.75, 1.0];
    let mut q = ptr::null_mut();
    let st = unsafe { mr_quotes_from_heston(&p, strikes.as_ptr(), strikes.len(), mats.as_ptr(), mats.len(), &mut q) };
    assert_eq!(st, MrStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { mr_quotes_len(q, &mut n) }, MrStatus::Ok);
    assert_eq!(n, 100);
    let (mut k, mut t, mut c) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { mr_quotes_get(q, 99, &mut k, &mut t, &mut c) }, MrStatus::Ok);
    assert!(k > 0.0 && t > 0.0 && c > 0.0);
    assert_eq!(unsafe { mr_quotes_get(q, 100, &mut k, &mut t, &mut c) }, MrStatus::InvalidInput);

    let mut sigma = 0.0;
    assert_eq!(unsafe { mr_calibrate_bs(q, 10.0, 1.0, &mut sigma) }, MrStatus::Ok);
    assert!((sigma - 0.3699704).abs() < 1e-6);
    assert_eq!(unsafe { mr_calibrate_bs(q, 10.1, 1.0, &mut sigma) }, MrStatus::InvalidInput);

    let mut lv = ptr::null_mut();
    let mut err = f64::NAN;
    assert_eq!(unsafe { mr_calibrate_dupire(q, 300, &mut lv, &mut err) }, MrStatus::Ok);
    assert!(err < 0.015, "{err}");
    let mut s = 0.0;
    assert_eq!(unsafe { mr_local_vol_eval(lv, 0.5, 10.0, &mut s) }, MrStatus::Ok);
    assert!(s > 0.1 && s < 1.0, "{s}");
    assert_eq!(unsafe { mr_local_vol_eval(lv, 0.5, 0.0, &mut s) }, MrStatus::InvalidInput);

    let mut b = ptr::null_mut();
    assert_eq!(unsafe { mr_boundary_dupire(lv, 0.1, 10.0, 1.0, &mut b) }, MrStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { mr_boundary_1d_len(b, &mut len) }, MrStatus::Ok);
    assert_eq!(len, 301);
    let mut at0 = 0.0;
    assert_eq!(unsafe { mr_boundary_1d_eval(b, 0.0, &mut at0) }, MrStatus::Ok);
    assert!(at0 > 5.0 && at0 < 10.0, "{at0}");
    unsafe {
        mr_boundary_1d_free(b);
        mr_local_vol_free(lv);
        mr_quotes_free(q);
    }
}

#[test]
fn bs_rule_matches_core() {
    let p = base();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { mr_boundary_bs(0.37, 0.1, 10.0, 1.0, 100, &mut b) }, MrStatus::Ok);
    let mut st = MrPayoffStats::default();
    assert_eq!(unsafe { mr_apply_boundary_1d(&p, b, 2000, 11, &mut st) }, MrStatus::Ok);

    let cfg = Solver1DConfig { n1: 100, ..Solver1DConfig::default() };
    let (_, direct) = price_american_put_1d(&ConstantVol(0.37), &cfg, 10.0, 1.0, 0.1).unwrap();
    let sim = HestonSimulator::new(HestonParams::base_case(), 2000, 100, 1.0, 11).unwrap();
    let set = apply_rule_1d(&sim, &direct, 10.0, 0.1).unwrap();
    let mean = set.payoff.iter().sum::<f64>() / 2000.0;
    assert_eq!(st.n, 2000);
    assert!((st.mean - mean).abs() < 1e-12);
    assert!(st.se > 0.0 && st.max <= 10.0 && st.exercised > 0);

    assert_eq!(unsafe { mr_apply_boundary_1d(&p, b, 0, 11, &mut st) }, MrStatus::InvalidInput);
    unsafe { mr_boundary_1d_free(b) };
}

#[test]
fn heston_boundary_small_grid() {
    let p = base();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { mr_boundary_heston(&p, 10.0, 1.0, 60, 30, 50, &mut b) }, MrStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { mr_boundary_2d_len(b, &mut len) }, MrStatus::Ok);
    assert_eq!(len, 51);
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { mr_boundary_2d_eval(b, 0.5, 0.05, &mut lo) }, MrStatus::Ok);
    assert_eq!(unsafe { mr_boundary_2d_eval(b, 0.5, 0.5, &mut hi) }, MrStatus::Ok);
    assert!(lo > hi && hi >= 0.0 && lo < 10.0, "{lo} {hi}");
    let mut st = MrPayoffStats::default();
    assert_eq!(unsafe { mr_apply_boundary_2d(&p, b, 1000, 5, &mut st) }, MrStatus::Ok);
    assert!(st.mean > 0.5 && st.mean < 2.0, "{}", st.mean);
    unsafe { mr_boundary_2d_free(b) };
}

#[test]
fn header_declares_entry_points() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/modelrisk.h")).unwrap();
    for name in [
        "mr_last_error_message",
        "mr_heston_call_price",
        "mr_quotes_from_heston",
        "mr_calibrate_dupire",
        "mr_boundary_heston",
        "mr_apply_boundary_2d",
        "typedef struct MrQuotes MrQuotes",
        "MR_STATUS_PANIC",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

/// Builds a C program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libmodelrisk_ffi.so");
    assert!(lib.exists(), "shared library not built at {}", lib.display());
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("mr_smoke");
    let status = std::process::Command::new("cc")
        .arg(format!("{dir}/tests/c/smoke.c"))
        .arg(format!("-I{dir}/include"))
        .arg(format!("-L{}", profile_dir.display()))
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .args(["-lmodelrisk_ffi", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let run = std::process::Command::new(&out).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("0.3699704"));
}
