use std::ffi::CStr;
use std::ptr;

use vnls_ffi::*;

fn soliton(n: usize, kappa: i32, mus: &[(f64, f64)], c: &[(f64, f64)]) -> (VnlsStatus, *mut VnlsSoliton) {
    let (mr, mi): (Vec<f64>, Vec<f64>) = mus.iter().cloned().unzip();
    let (cr, ci): (Vec<f64>, Vec<f64>) = c.iter().cloned().unzip();
    let mut h = ptr::null_mut();
    let st = unsafe { vnls_soliton_new(n, kappa, mus.len(), mr.as_ptr(), mi.as_ptr(), cr.as_ptr(), ci.as_ptr(), &mut h) };
    (st, h)
}

#[test]
fn soliton_eval_matches_sech_profile() {
    // mu = i, C = (1, 1), kappa = -1: |u(x, 0)| = sech(x)
    let (st, h) = soliton(2, -1, &[(0.0, 1.0)], &[(1.0, 0.0), (1.0, 0.0)]);
    assert_eq!(st, VnlsStatus::Ok);
    assert_eq!(unsafe { vnls_soliton_ncomp(h) }, 1);
    for x in [-2.0, -0.5, 0.0, 1.3] {
        let (mut re, mut im) = ([0.0], [0.0]);
        let st = unsafe { vnls_soliton_eval(h, x, 0.0, re.as_mut_ptr(), im.as_mut_ptr(), 1) };
        assert_eq!(st, VnlsStatus::Ok);
        let m = (re[0] * re[0] + im[0] * im[0]).sqrt();
        assert!((m - 1.0 / f64::cosh(x)).abs() < 1e-13, "{x}: {m}");
    }
    unsafe { vnls_soliton_free(h) };
}

#[test]
fn error_codes() {
    let (st, _) = soliton(2, 0, &[(0.0, 1.0)], &[(1.0, 0.0), (1.0, 0.0)]);
    assert_eq!(st, VnlsStatus::InvalidArgument);
    let (st, h) = soliton(3, -1, &[(0.2, 1.0)], &[(1.0, 0.0), (1.0, 0.0), (0.5, 0.0)]);
    assert_eq!(st, VnlsStatus::Ok);
    let (mut re, mut im) = ([0.0; 1], [0.0; 1]);
    assert_eq!(unsafe { vnls_soliton_eval(h, 0.0, 0.0, re.as_mut_ptr(), im.as_mut_ptr(), 1) }, VnlsStatus::BufferTooSmall);
    assert_eq!(unsafe { vnls_soliton_eval(ptr::null(), 0.0, 0.0, re.as_mut_ptr(), im.as_mut_ptr(), 1) }, VnlsStatus::NullPointer);
    unsafe { vnls_soliton_free(h) };
    unsafe { vnls_soliton_free(ptr::null_mut()) };
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { vnls_lattice_new_random(2, 2, 0.1, -1, 1, &mut l) }, VnlsStatus::InvalidArgument);
    assert_eq!(unsafe { vnls_lattice_step(ptr::null_mut(), 0.01, 1, 0) }, VnlsStatus::NullPointer);
    for code in 0..9 {
        let s = unsafe { CStr::from_ptr(vnls_status_message(code)) }.to_str().unwrap();
        assert!(!s.is_empty());
    }
    assert_eq!(unsafe { CStr::from_ptr(vnls_status_message(0)) }.to_str().unwrap(), "ok");
}

#[test]
fn lattice_charges_are_conserved_over_short_runs() {
    for defect in [-1i64, 5] {
        let mut l = ptr::null_mut();
        assert_eq!(unsafe { vnls_lattice_new_random(12, 2, 0.2, defect, 42, &mut l) }, VnlsStatus::Ok);
        let (mut r0, mut i0, mut r1, mut i1) = ([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]);
        assert_eq!(unsafe { vnls_lattice_charges(l, r0.as_mut_ptr(), i0.as_mut_ptr()) }, VnlsStatus::Ok);
        assert_eq!(unsafe { vnls_lattice_step(l, 1e-3, 200, 0) }, VnlsStatus::Ok);
        assert_eq!(unsafe { vnls_lattice_charges(l, r1.as_mut_ptr(), i1.as_mut_ptr()) }, VnlsStatus::Ok);
        for k in 0..3 {
            let d = ((r1[k] - r0[k]).powi(2) + (i1[k] - i0[k]).powi(2)).sqrt();
            assert!(d < 1e-10 * (1.0 + r0[k].abs()), "defect {defect} I{}: {d:e}", k + 1);
        }
        unsafe { vnls_lattice_free(l) };
    }
}

#[test]
fn header_is_generated_and_parses_as_c() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vnls.h");
    let text = std::fs::read_to_string(&path).unwrap();
    for sym in ["vnls_soliton_new", "vnls_soliton_eval", "vnls_lattice_step", "vnls_lattice_charges", "VNLS_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&path).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
