//! C ABI over the `vnls` crate.
//!
//! Objects cross the boundary as opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every fallible function returns a `VnlsStatus` code; results are
//! written through caller-provided pointers. Panics are caught and reported as
//! `VNLS_STATUS_PANIC`.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64;
use vnls::darboux::{DarbouxPole, DressedField, DressingMode, SolitonSpec};
use vnls::dnls::{charges, rk4_step, Form, LatticeState};
use vnls::{make_params, Error, FieldClosure};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VnlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Singular = 3,
    NonFinite = 4,
    BufferTooSmall = 5,
    Failed = 6,
    Panic = 7,
}

/// A Darboux-dressed soliton (any number of rank-one poles on the zero seed).
pub struct VnlsSoliton {
    field: DressedField,
}

/// A lattice state with an optional point defect.
pub struct VnlsLattice {
    state: LatticeState,
}

fn status_of(e: &Error) -> VnlsStatus {
    match e {
        Error::InvalidParams(_) | Error::IndexOutOfRange { .. } | Error::Parse(_) | Error::AtPole(_) => VnlsStatus::InvalidArgument,
        Error::SingularGram { .. } | Error::SingularCauchy { .. } | Error::SingularM { .. } | Error::IllConditionedFit { .. } => VnlsStatus::Singular,
        Error::NonFinite(_) | Error::Overflow { .. } => VnlsStatus::NonFinite,
        _ => VnlsStatus::Failed,
    }
}

fn guard(f: impl FnOnce() -> VnlsStatus) -> VnlsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(VnlsStatus::Panic)
}

/// Static, NUL-terminated description of a status code; unknown codes get a generic message.
#[no_mangle]
pub extern "C" fn vnls_status_message(status: i32) -> *const c_char {
    let s: &'static [u8] = match status {
        0 => b"ok\0",
        1 => b"null pointer argument\0",
        2 => b"invalid argument\0",
        3 => b"singular or ill-conditioned system\0",
        4 => b"non-finite value\0",
        5 => b"output buffer too small\0",
        6 => b"computation failed\0",
        7 => b"internal panic\0",
        _ => b"unknown status\0",
    };
    s.as_ptr() as *const c_char
}

/// Builds a soliton from `npoles` rank-one poles.
///
/// `n` is the Lax matrix size (field components + 1), `kappa` is +1 or -1. Pole k has spectral
/// parameter `mu_re[k] + i mu_im[k]` and polarization `c_re[k*n + j] + i c_im[k*n + j]`.
///
/// # Safety
/// `mu_re`, `mu_im` must point to `npoles` doubles, `c_re`, `c_im` to `npoles * n` doubles, and
/// `out` to writable storage for one handle. The handle must be released with `vnls_soliton_free`.
#[no_mangle]
pub unsafe extern "C" fn vnls_soliton_new(
    n: usize,
    kappa: i32,
    npoles: usize,
    mu_re: *const f64,
    mu_im: *const f64,
    c_re: *const f64,
    c_im: *const f64,
    out: *mut *mut VnlsSoliton,
) -> VnlsStatus {
    guard(|| {
        if out.is_null() || mu_re.is_null() || mu_im.is_null() || c_re.is_null() || c_im.is_null() {
            return VnlsStatus::NullPointer;
        }
        if npoles == 0 || n < 2 {
            return VnlsStatus::InvalidArgument;
        }
        let (mr, mi) = (std::slice::from_raw_parts(mu_re, npoles), std::slice::from_raw_parts(mu_im, npoles));
        let (cr, ci) = (std::slice::from_raw_parts(c_re, npoles * n), std::slice::from_raw_parts(c_im, npoles * n));
        let build = || -> vnls::Result<SolitonSpec> {
            let params = make_params(n, kappa)?;
            let poles = (0..npoles)
                .map(|k| {
                    let cv: Vec<Complex64> = (0..n).map(|j| Complex64::new(cr[k * n + j], ci[k * n + j])).collect();
                    DarbouxPole::vector(Complex64::new(mr[k], mi[k]), &cv)
                })
                .collect::<vnls::Result<Vec<_>>>()?;
            SolitonSpec::new(params, poles)
        };
        match build() {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(VnlsSoliton { field: DressedField::new(spec, DressingMode::NPole) }));
                VnlsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Releases a soliton handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from `vnls_soliton_new` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vnls_soliton_free(h: *mut VnlsSoliton) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of field components, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live soliton handle.
#[no_mangle]
pub unsafe extern "C" fn vnls_soliton_ncomp(h: *const VnlsSoliton) -> usize {
    h.as_ref().map_or(0, |s| s.field.n_comp())
}

/// Evaluates u(x, t) into `re[0..len]`, `im[0..len]`; `len` must be at least the component count.
///
/// # Safety
/// `h` must be a live soliton handle; `re` and `im` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vnls_soliton_eval(h: *const VnlsSoliton, x: f64, t: f64, re: *mut f64, im: *mut f64, len: usize) -> VnlsStatus {
    guard(|| {
        let Some(s) = h.as_ref() else { return VnlsStatus::NullPointer };
        if re.is_null() || im.is_null() {
            return VnlsStatus::NullPointer;
        }
        if len < s.field.n_comp() {
            return VnlsStatus::BufferTooSmall;
        }
        match s.field.eval(x, t) {
            Ok(u) => {
                for (k, z) in u.iter().enumerate() {
                    *re.add(k) = z.re;
                    *im.add(k) = z.im;
                }
                VnlsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Random lattice state with entries of modulus at most `amplitude`, seeded deterministically.
/// `defect_site` is a 0-based site index, or negative for no defect.
///
/// # Safety
/// `out` must point to writable storage for one handle, released with `vnls_lattice_free`.
#[no_mangle]
pub unsafe extern "C" fn vnls_lattice_new_random(nsites: usize, ncomp: usize, amplitude: f64, defect_site: i64, seed: u64, out: *mut *mut VnlsLattice) -> VnlsStatus {
    guard(|| {
        if out.is_null() {
            return VnlsStatus::NullPointer;
        }
        let site = usize::try_from(defect_site).ok();
        match vnls::suite::random_lattice(nsites, ncomp, amplitude, site, seed) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(VnlsLattice { state }));
                VnlsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Releases a lattice handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from `vnls_lattice_new_random` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vnls_lattice_free(h: *mut VnlsLattice) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Advances the state by `steps` RK4 steps of size `dt`. `printed_form` nonzero selects the
/// equations of motion exactly as printed instead of the corrected ones. On error the state is
/// left at the last good step.
///
/// # Safety
/// `h` must be a live lattice handle.
#[no_mangle]
pub unsafe extern "C" fn vnls_lattice_step(h: *mut VnlsLattice, dt: f64, steps: usize, printed_form: i32) -> VnlsStatus {
    guard(|| {
        let Some(l) = h.as_mut() else { return VnlsStatus::NullPointer };
        if !(dt > 0.0) {
            return VnlsStatus::InvalidArgument;
        }
        let form = if printed_form != 0 { Form::AsPrinted } else { Form::Corrected };
        for _ in 0..steps {
            match rk4_step(&l.state, dt, form) {
                Ok(s) => l.state = s,
                Err(e) => return status_of(&e),
            }
        }
        VnlsStatus::Ok
    })
}

/// Writes the three conserved charges I1, I2, I3 into `re[0..3]`, `im[0..3]`.
///
/// # Safety
/// `h` must be a live lattice handle; `re` and `im` must point to 3 writable doubles each.
#[no_mangle]
pub unsafe extern "C" fn vnls_lattice_charges(h: *const VnlsLattice, re: *mut f64, im: *mut f64) -> VnlsStatus {
    guard(|| {
        let Some(l) = h.as_ref() else { return VnlsStatus::NullPointer };
        if re.is_null() || im.is_null() {
            return VnlsStatus::NullPointer;
        }
        match charges(&l.state) {
            Ok(q) => {
                for (k, z) in q.as_array().iter().enumerate() {
                    *re.add(k) = z.re;
                    *im.add(k) = z.im;
                }
                VnlsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
