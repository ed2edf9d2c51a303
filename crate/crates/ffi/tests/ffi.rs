use std::ffi::{CStr, CString};
use std::ptr;

use splitlab_ffi::*;

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

fn last_error() -> String {
    let p = spl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn bst_mean_table_matches_harmonic_numbers() {
    let mut s = ptr::null_mut();
    assert_eq!(spl_splitter_new_bst(&mut s), SplStatus::Ok);
    let mut p = SplParams { b: 0, s: 0, s0: 0, s1: 0 };
    unsafe {
        assert_eq!(spl_params_default(s, &mut p), SplStatus::Ok);
        assert_eq!(p, SplParams { b: 2, s: 1, s0: 1, s1: 0 });
        let mut t = ptr::null_mut();
        assert_eq!(spl_mean_table_new(s, &p, 500, true, &mut t), SplStatus::Ok);
        assert_eq!(spl_mean_table_n_max(t), 500);
        let mut ep = 0.0;
        assert_eq!(spl_mean_table_path(t, 500, &mut ep), SplStatus::Ok);
        let want = 2.0 * 501.0 * harmonic(500) - 4.0 * 500.0;
        assert!((ep - want).abs() < 1e-9 * want);
        let mut ew = 0.0;
        assert_eq!(spl_mean_table_wiener(t, 2, &mut ew), SplStatus::Ok);
        assert!((ew - 1.0).abs() < 1e-12);
        assert_eq!(spl_mean_table_path(t, 501, &mut ep), SplStatus::InvalidArgument);
        assert!(last_error().contains("n_max"));
        spl_mean_table_free(t);
        let mut mu = 0.0;
        assert_eq!(spl_splitter_mu_inv(s, &mut mu), SplStatus::Ok);
        assert!((mu - 2.0).abs() < 1e-10);
        spl_splitter_free(s);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let name = CString::new("trie").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { spl_splitter_new(name.as_ptr(), 2, 1, ptr::null(), 0, 1.0, &mut s) };
    assert_eq!(st, SplStatus::UnsupportedSplitter);
    assert!(s.is_null());
    assert!(last_error().contains("lattice"));

    assert_eq!(spl_splitter_new_median(0, &mut s), SplStatus::InvalidSplitter);
    assert_eq!(spl_splitter_new_bst(ptr::null_mut()), SplStatus::NullPointer);

    assert_eq!(spl_splitter_new_bst(&mut s), SplStatus::Ok);
    let bad = SplParams { b: 2, s: 1, s0: 5, s1: 0 };
    let mut t = ptr::null_mut();
    let st = unsafe { spl_mean_table_new(s, &bad, 10, false, &mut t) };
    assert_eq!(st, SplStatus::InvalidParams);
    assert!(last_error().contains("s0"));
    unsafe { spl_splitter_free(s) };
}

#[test]
fn simulate_is_deterministic() {
    let name = CString::new("dirichlet").unwrap();
    let alpha = [1.0, 2.0, 3.0];
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(spl_splitter_new(name.as_ptr(), 0, 0, alpha.as_ptr(), 3, 0.0, &mut s), SplStatus::Ok);
        assert_eq!(spl_splitter_branching(s), 3);
        let mut p = SplParams { b: 0, s: 0, s0: 0, s1: 0 };
        spl_params_default(s, &mut p);
        let mut a = [0.0; 8];
        let mut b = [0.0; 8];
        let mut w = [0.0; 8];
        assert_eq!(spl_simulate(s, &p, 300, 8, 7, a.as_mut_ptr(), w.as_mut_ptr()), SplStatus::Ok);
        assert_eq!(spl_simulate(s, &p, 300, 8, 7, b.as_mut_ptr(), ptr::null_mut()), SplStatus::Ok);
        assert_eq!(a, b);
        assert!(a.iter().zip(&w).all(|(p, w)| *p > 0.0 && w >= p));
        spl_splitter_free(s);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/splitlab.h")).unwrap();
    for sym in ["spl_splitter_new", "spl_mean_table_path", "spl_last_error", "SplStatus", "typedef struct SplSplitter"] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}
