use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use lcbp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lcbp_last_error()).to_str().unwrap().to_string() }
}

const TWO_VAR: &str = "2\n\n1\n0\n2\n2\n0 1\n1 3\n\n2\n0 1\n2 2\n4\n0 2\n1 1\n2 1\n3 2\n";

#[test]
fn parse_run_and_compare_with_exact() {
    let text = CString::new(TWO_VAR).unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(lcbp_graph_from_string(text.as_ptr(), &mut g), LcbpStatus::Ok);
        assert_eq!(lcbp_graph_num_vars(g), 2);
        assert_eq!(lcbp_graph_num_factors(g), 2);
        let mut card = 0;
        assert_eq!(lcbp_graph_cardinality(g, 1, &mut card), LcbpStatus::Ok);
        assert_eq!(card, 2);

        let mut ex = ptr::null_mut();
        assert_eq!(lcbp_exact(g, &mut ex), LcbpStatus::Ok);
        let mut buf = [0.0; 2];
        assert_eq!(lcbp_result_marginal(ex, 0, buf.as_mut_ptr(), 2), LcbpStatus::Ok);
        // Z = 2 + 1 + 3 + 6 = 12, P(x0 = 0) = 3 / 12
        assert!((buf[0] - 0.25).abs() < 1e-14);

        for m in [LcbpMethod::Bp, LcbpMethod::Lcbp, LcbpMethod::Exact] {
            let mut r = ptr::null_mut();
            assert_eq!(lcbp_run(g, m, ptr::null(), &mut r), LcbpStatus::Ok);
            assert!(lcbp_result_converged(r));
            assert_eq!(lcbp_result_num_vars(r), 2);
            let mut err = f64::NAN;
            assert_eq!(lcbp_max_linf_error(r, ex, &mut err), LcbpStatus::Ok);
            assert!(err < 1e-12, "{m:?}");
            lcbp_result_free(r);
        }
        lcbp_result_free(ex);
        lcbp_graph_free(g);
    }
}

#[test]
fn generators_and_options() {
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(lcbp_gen_regular(12, 3, 0.5, 2.0, false, 7, &mut g), LcbpStatus::Ok);
        assert_eq!(lcbp_graph_num_factors(g), 12 + 18);
        let mut opts = lcbp_run_options_default();
        assert_eq!(opts.tol, 1e-9);
        opts.cavity_init = LcbpCavityInit::Exact;
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(lcbp_run(g, LcbpMethod::Lcbp, &opts, &mut a), LcbpStatus::Ok);
        assert_eq!(lcbp_exact(g, &mut b), LcbpStatus::Ok);
        let mut err = f64::NAN;
        assert_eq!(lcbp_max_linf_error(a, b, &mut err), LcbpStatus::Ok);
        assert!(err < 0.05);
        assert!(lcbp_result_iterations(a) > 0);
        lcbp_result_free(a);
        lcbp_result_free(b);
        lcbp_graph_free(g);

        assert_eq!(lcbp_gen_kfactor(10, 8, 3, 1.0, 1, &mut g), LcbpStatus::Ok);
        assert_eq!(lcbp_graph_num_vars(g), 10);
        lcbp_graph_free(g);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(lcbp_graph_from_string(ptr::null(), &mut g), LcbpStatus::NullPointer);
        let bad = CString::new("1\n\n1\n0\n2\n3\n0 1\n").unwrap();
        assert_eq!(lcbp_graph_from_string(bad.as_ptr(), &mut g), LcbpStatus::Parse);
        assert!(last_error().contains("line"));
        let path = CString::new("/nonexistent/graph.fg").unwrap();
        assert_eq!(lcbp_graph_read(path.as_ptr(), &mut g), LcbpStatus::Io);
        assert_eq!(lcbp_gen_regular(10, 2, 0.5, 2.0, false, 0, &mut g), LcbpStatus::InvalidArgument);
        assert!(g.is_null());

        let zero = CString::new("1\n\n1\n0\n2\n0\n").unwrap();
        assert_eq!(lcbp_graph_from_string(zero.as_ptr(), &mut g), LcbpStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(lcbp_exact(g, &mut r), LcbpStatus::Degenerate);
        assert_eq!(lcbp_graph_cardinality(g, 5, &mut 0), LcbpStatus::InvalidArgument);
        lcbp_graph_free(g);

        let text = CString::new(TWO_VAR).unwrap();
        assert_eq!(lcbp_graph_from_string(text.as_ptr(), &mut g), LcbpStatus::Ok);
        assert_eq!(lcbp_exact(g, &mut r), LcbpStatus::Ok);
        let mut one = [0.0; 1];
        assert_eq!(lcbp_result_marginal(r, 0, one.as_mut_ptr(), 1), LcbpStatus::InvalidArgument);
        assert_eq!(lcbp_result_marginal(r, 9, one.as_mut_ptr(), 1), LcbpStatus::InvalidArgument);
        lcbp_result_free(r);
        lcbp_graph_free(g);
        lcbp_graph_free(ptr::null_mut());
        assert_eq!(lcbp_graph_num_vars(ptr::null()), 0);
    }
}

#[test]
fn write_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("g.fg").to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(lcbp_gen_regular(8, 3, 0.5, 2.0, true, 3, &mut g), LcbpStatus::Ok);
        assert_eq!(lcbp_graph_write(g, path.as_ptr()), LcbpStatus::Ok);
        assert_eq!(lcbp_graph_read(path.as_ptr(), &mut h), LcbpStatus::Ok);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(lcbp_exact(g, &mut a), LcbpStatus::Ok);
        assert_eq!(lcbp_exact(h, &mut b), LcbpStatus::Ok);
        let mut err = f64::NAN;
        assert_eq!(lcbp_max_linf_error(a, b, &mut err), LcbpStatus::Ok);
        assert_eq!(err, 0.0);
        lcbp_result_free(a);
        lcbp_result_free(b);
        lcbp_graph_free(g);
        lcbp_graph_free(h);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/lcbp.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["lcbp_run", "lcbp_graph_free", "LCBP_STATUS_CAPACITY", "typedef struct LcbpGraph LcbpGraph"] {
        assert!(text.contains(sym), "{sym}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) = Command::new(compiler).args(["-fsyntax-only", "-x", lang, header]).status() else {
            eprintln!("{compiler} not found, skipping");
            continue;
        };
        assert!(status.success(), "{compiler}");
    }
}
