//! Verification suite: one function per acceptance check, shared by the CLI and the test targets.
//!
//! Every check reports the measured value, the tolerance and the comparison. Diagnostic lines
//! (printed-form comparisons, expected floors) carry `gate = false` and do not decide pass/fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backlund::{conjugate_reflect, conjugation_identity_residual, select_branch, BtPair};
use crate::darboux::{
    darboux_matrix, darboux_matrix_inverse, multi_pole_p, multi_pole_p_cramer, n_soliton, n_soliton_tau,
    projector, q_from_vacuum, refine_peak, DarbouxPole, DressedField, DressingMode, SolitonSpec,
};
use crate::dnls::{
    charges_bulk, charges_defect, conservation_run, lntau_check, default_lambda_samples, poisson_bracket,
    site_class, zcc_discrete, Defect, Form, LatticeState, SiteClass,
};
use crate::error::{Error, Result};
use crate::field::{FieldClosure, FieldGrid, GridSpec};
use crate::glm::{
    assemble_kernels, bright_soliton_kernel, calibrate, glm_residual, kernel_time_residual, linear_residuals,
    m_hat_from_kernel, one_soliton_closed, solve_glm, static_soliton_kernel, validate_kernel, BareOperatorSpec,
    KernelSpec, KernelTerm,
};
use crate::lax_core::{make_params, vnls_residual, LaxParams};
use crate::linalg::{c, frob, vec_norm, CMat, C64, I};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cmp {
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: String,
    pub name: String,
    pub value: f64,
    pub cmp: Cmp,
    pub tolerance: f64,
    pub pass: bool,
    /// Only gating checks decide the criterion.
    pub gate: bool,
    pub note: String,
}

impl Check {
    pub fn below(criterion: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(criterion, name.into(), value, Cmp::Below, tolerance)
    }

    pub fn at_least(criterion: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(criterion, name.into(), value, Cmp::AtLeast, tolerance)
    }

    fn new(criterion: &str, name: String, value: f64, cmp: Cmp, tolerance: f64) -> Self {
        let pass = match cmp {
            Cmp::Below => value < tolerance,
            Cmp::AtLeast => value >= tolerance,
        };
        Self { criterion: criterion.into(), name, value, cmp, tolerance, pass, gate: true, note: String::new() }
    }

    pub fn diagnostic(mut self) -> Self {
        self.gate = false;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn line(&self) -> String {
        let op = match self.cmp {
            Cmp::Below => "<",
            Cmp::AtLeast => ">=",
        };
        let verdict = match (self.gate, self.pass) {
            (true, true) => "PASS",
            (true, false) => "FAIL",
            (false, true) => "info: within",
            (false, false) => "info: outside",
        };
        let mut s = format!("[{}] {}: {:.3e} {} {:.1e} {}", self.criterion, self.name, self.value, op, self.tolerance, verdict);
        if !self.note.is_empty() {
            s.push_str(" (");
            s.push_str(&self.note);
            s.push(')');
        }
        s
    }
}

/// True when every gating check passes.
pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().filter(|c| c.gate).all(|c| c.pass)
}

/// Least-squares slope of ln(err) against ln(h).
pub fn fitted_order(hs: &[f64], errs: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    if slope.is_finite() {
        slope
    } else {
        f64::NAN
    }
}

pub const DX_LEVELS: [f64; 3] = [0.1, 0.05, 0.025];

pub fn one_pole_spec(n: usize, kappa: i32, mu: C64, pol: &[C64]) -> Result<SolitonSpec> {
    SolitonSpec::new(make_params(n, kappa)?, vec![DarbouxPole::vector(mu, pol)?])
}

fn gram_sign(spec: &SolitonSpec, x: f64, t: f64) -> Result<f64> {
    let q = q_from_vacuum(spec, 0, x, t)?;
    let n = spec.params.n;
    let s: f64 = (0..n - 1).map(|k| q[(k, 0)].norm_sqr()).sum();
    Ok(s - spec.params.kappa_f() * q[(n - 1, 0)].norm_sqr())
}

/// A 20-wide x window for a one-pole soliton at time t. For kappa = +1 the solution is singular
/// where the Gram scalar vanishes, so the window starts 2 units to the right of that point.
pub fn soliton_window(spec: &SolitonSpec, t: f64) -> Result<(f64, f64)> {
    let centre = 2.0 * spec.poles[0].mu.re * t;
    if spec.params.kappa < 0 {
        return Ok((centre - 10.0, centre + 10.0));
    }
    let mut prev = gram_sign(spec, centre - 30.0, t)?;
    let mut x = centre - 30.0;
    while x < centre + 30.0 {
        let nx = x + 0.25;
        let g = gram_sign(spec, nx, t)?;
        if g.signum() != prev.signum() {
            let (mut a, mut b) = (x, nx);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if gram_sign(spec, m, t)?.signum() == prev.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            let x0 = 0.5 * (a + b);
            return Ok((x0 + 2.0, x0 + 22.0));
        }
        prev = g;
        x = nx;
    }
    Ok((centre - 10.0, centre + 10.0))
}

/// Max vnls residual on three-row grids over the dx levels (dt = dx^2 / 2).
pub fn pde_residuals(f: &dyn FieldClosure, kappa: i32, window: (f64, f64), t: f64, dxs: &[f64]) -> Result<Vec<f64>> {
    dxs.iter()
        .map(|&dx| {
            let g = FieldGrid::sample(f, GridSpec::centred_in_time(window.0, window.1, dx, t, 0.5 * dx * dx)?)?;
            Ok(vnls_residual(&g, kappa)?.max())
        })
        .collect()
}

fn default_pol(n: usize) -> Vec<C64> {
    match n {
        2 => vec![c(1.0, 0.0), c(1.0, 0.0)],
        _ => {
            let mut v = vec![c(1.0, 0.0); n];
            v[1] = c(0.5, 0.5);
            v
        }
    }
}

/// Criterion 1: Darboux one-soliton PDE residual order.
pub fn criterion1() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [2, 3] {
        for kappa in [1, -1] {
            let spec = one_pole_spec(n, kappa, c(0.3, 1.0), &default_pol(n))?;
            let t = 0.2;
            let win = soliton_window(&spec, t)?;
            let f = DressedField::new(spec, DressingMode::Single(0));
            let errs = pde_residuals(&f, kappa, win, t, &DX_LEVELS)?;
            out.push(
                Check::at_least("1", format!("PDE residual order, N={n}, kappa={kappa:+}"), fitted_order(&DX_LEVELS, &errs), 3.5)
                    .with_note(format!("window [{:.2}, {:.2}], residuals {:.2e} {:.2e} {:.2e}", win.0, win.1, errs[0], errs[1], errs[2])),
            );
        }
    }
    Ok(out)
}

fn rand_c(rng: &mut ChaCha8Rng, s: f64) -> C64 {
    c(rng.gen_range(-s..s), rng.gen_range(-s..s))
}

/// Criterion 2: projector and Darboux identities over randomized trials.
pub fn criterion2(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut idem, mut inv, mut ker, mut gauge) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut done = 0;
    while done < trials {
        let n = rng.gen_range(2..=4);
        let s = rng.gen_range(1..n);
        let kappa = if rng.gen_bool(0.5) { 1 } else { -1 };
        let params = make_params(n, kappa)?;
        let q = CMat::from_fn(n, s, |_, _| rand_c(&mut rng, 1.0));
        let mu = c(rng.gen_range(-1.0..1.0), rng.gen_range(0.3..2.0));
        let pr = match projector(&params, &q) {
            Ok(p) => p,
            Err(Error::SingularGram { .. }) => continue,
            Err(e) => return Err(e),
        };
        let pn = frob(&pr.p).max(1.0);
        idem = idem.max(pr.idempotency_defect() / (pn * pn));
        let lam = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let m = darboux_matrix(&pr, mu, lam)?;
        let mi = darboux_matrix_inverse(&params, &pr, mu, lam)?;
        inv = inv.max(frob(&(&m * &mi - CMat::identity(n, n))) / (frob(&m) * frob(&mi)));
        let (k1, k2) = pr.kernel_defects(&params);
        let qn = frob(&q);
        ker = ker.max(k1.max(k2) / (pn * qn));
        let g = CMat::from_fn(s, s, |_, _| rand_c(&mut rng, 1.0)) + CMat::identity(s, s) * c(2.0, 0.0);
        let pr2 = projector(&params, &(&q * g))?;
        gauge = gauge.max(frob(&(&pr2.p - &pr.p)) / pn);
        done += 1;
    }
    Ok(vec![
        Check::below("2", format!("P^2 - P over {trials} trials"), idem, 1e-12),
        Check::below("2", "M M^-1 - 1", inv, 1e-12),
        Check::below("2", "kernel relations (1-P)Qq*, q^T(1-P)", ker, 1e-12),
        Check::below("2", "gauge invariance q -> qC", gauge, 1e-12),
    ])
}

pub fn two_soliton_spec() -> Result<SolitonSpec> {
    let p = make_params(2, -1)?;
    SolitonSpec::new(
        p,
        vec![
            DarbouxPole::vector(c(0.5, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)])?,
            DarbouxPole::vector(c(-0.5, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)])?,
        ],
    )
}

/// Criterion 3: two-soliton refinement and elastic collision.
pub fn criterion3() -> Result<Vec<Check>> {
    let spec = two_soliton_spec()?;
    let f = DressedField::new(spec.clone(), DressingMode::NPole);
    let errs = pde_residuals(&f, -1, (-10.0, 10.0), 0.1, &DX_LEVELS)?;
    let mut out = vec![Check::at_least("3", "two-soliton PDE residual order", fitted_order(&DX_LEVELS, &errs), 3.5)
        .with_note(format!("residuals {:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2]))];
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for t in [-20.0, 20.0] {
        for (i, pole) in spec.poles.iter().enumerate() {
            let xc = 2.0 * pole.mu.re * t;
            let (_, a2) = refine_peak(&f, t, xc, 4.0)?;
            let single = DressedField::new(spec.clone(), DressingMode::Single(i));
            let (_, a1) = refine_peak(&single, t, xc, 4.0)?;
            worst = worst.max((a2 - a1).abs());
            notes.push(format!("t={t:+} pole {i}: {a2:.6} vs {a1:.6}"));
        }
    }
    out.push(Check::below("3", "separated peak vs one-soliton peak at |t|=20", worst, 1e-3).with_note(notes.join("; ")));
    Ok(out)
}

/// Backlund residual maxima for (0, u~) over the dx levels: (best branch, x maxima, t maxima) per branch.
pub fn bt_levels(spec: &SolitonSpec, t: f64, dxs: &[f64]) -> Result<Vec<crate::backlund::BranchReport>> {
    let f = DressedField::new(spec.clone(), DressingMode::Single(0));
    let mu = spec.poles[0].mu;
    dxs.iter()
        .map(|&dx| {
            let gs = GridSpec::centred_in_time(-8.0, 8.0, dx, t, 0.5 * dx * dx)?;
            let ut = FieldGrid::sample(&f, gs)?;
            let pair = BtPair::new(FieldGrid::zeros(gs, ut.ncomp), ut, mu, spec.params.kappa, 1)?;
            select_branch(&pair)
        })
        .collect()
}

/// Criterion 4: Backlund closure of the Darboux pairs (0, u~).
pub fn criterion4() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [2, 3] {
        let spec = one_pole_spec(n, -1, c(0.3, 1.0), &default_pol(n))?;
        let reps = bt_levels(&spec, 0.2, &DX_LEVELS)?;
        let best = reps[2].best;
        let consistent = reps.iter().all(|r| r.best == best);
        let xs: Vec<f64> = reps.iter().map(|r| r.x_of(best)).collect();
        let ts: Vec<f64> = reps.iter().map(|r| r.t_of(best)).collect();
        let dts: Vec<f64> = DX_LEVELS.iter().map(|d| 0.5 * d * d).collect();
        let floor = reps.iter().map(|r| r.x_of(-best).min(r.t_of(-best))).fold(f64::INFINITY, f64::min);
        let b = if best > 0 { "+" } else { "-" };
        out.push(
            Check::at_least("4", format!("BT x-residual order, N={n}, branch {b}"), fitted_order(&DX_LEVELS, &xs), 3.5)
                .with_note(format!("{:.2e} {:.2e} {:.2e}{}", xs[0], xs[1], xs[2], if consistent { "" } else { ", branch changed" })),
        );
        out.push(
            Check::at_least("4", format!("BT t-residual order in dt, N={n}, branch {b}"), fitted_order(&dts, &ts), 1.8)
                .with_note(format!("{:.2e} {:.2e} {:.2e}", ts[0], ts[1], ts[2])),
        );
        out.push(Check::at_least("4", format!("BT other-branch floor, N={n}"), floor, 1e-3));
    }
    Ok(out)
}

/// Criterion 5: conjugation identity and the reflected soliton.
pub fn criterion5(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(2..=4);
        let kappa = if rng.gen_bool(0.5) { 1 } else { -1 };
        let p = make_params(n, kappa)?;
        let u: Vec<C64> = (0..n - 1).map(|_| rand_c(&mut rng, 1.0)).collect();
        let lam = rand_c(&mut rng, 2.0);
        worst = worst.max(conjugation_identity_residual(&p, &u, lam)?);
    }
    let spec = one_pole_spec(2, -1, c(0.3, 1.0), &default_pol(2))?;
    let f = DressedField::new(spec, DressingMode::Single(0));
    let errs: Vec<f64> = DX_LEVELS
        .iter()
        .map(|&dx| {
            let g = FieldGrid::sample(&f, GridSpec::centred_in_time(-10.0, 10.0, dx, 0.2, 0.5 * dx * dx)?)?;
            Ok(vnls_residual(&conjugate_reflect(&g)?, -1)?.max())
        })
        .collect::<Result<_>>()?;
    Ok(vec![
        Check::below("5", "conjugation identity, 20 random inputs", worst, 1e-14),
        Check::at_least("5", "reflected soliton PDE residual order", fitted_order(&DX_LEVELS, &errs), 3.5)
            .with_note(format!("{:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2])),
    ])
}

fn two_term_kernel() -> Result<(KernelSpec, BareOperatorSpec)> {
    let bare = BareOperatorSpec::dispersive_for(&make_params(3, -1)?);
    let mk = |j: usize, b: C64, lam: C64, lamh: C64| {
        let t = KernelTerm::from_spectral(&bare, j, b, c(0.0, 0.0), lam, lamh);
        KernelTerm { bh: -t.b.conj() * 0.3, ..t }
    };
    let spec = KernelSpec {
        terms: vec![
            vec![mk(0, c(1.0, 0.0), c(0.1, 0.6), c(0.0, 0.5)), mk(0, c(0.5, 0.5), c(-0.2, 0.9), c(0.1, 0.7))],
            vec![mk(1, c(0.3, -0.2), c(0.0, 0.7), c(-0.1, 0.6)), mk(1, c(-0.4, 0.1), c(0.2, 0.5), c(0.0, 0.8))],
        ],
    };
    Ok((validate_kernel(&spec, &bare)?, bare))
}

/// Largest GLM equation residual over a few (x, z, t) points.
pub fn glm_equation_residual(spec: &KernelSpec) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, z, t) in [(0.1, 0.5, 0.0), (-1.0, 2.0, 0.4), (0.7, 0.8, -0.3), (2.0, 2.5, 1.0)] {
        let k = assemble_kernels(&solve_glm(spec, x, t)?);
        worst = worst.max(glm_residual(&k, spec, x, z, t));
    }
    Ok(worst)
}

/// Largest |closed form - linear solve| over L, L^ and M^-1.
pub fn closed_form_mismatch(spec: &KernelSpec) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, t) in [(-1.0, 0.0), (0.3, 0.7), (2.0, -0.4)] {
        let sol = solve_glm(spec, x, t)?;
        let cl = one_soliton_closed(spec, x, t)?;
        let k = assemble_kernels(&sol);
        for j in 0..spec.ncomp() {
            worst = worst.max((sol.l[(j, 0)] - cl.l[j]).norm());
            worst = worst.max((k.entries[j + 1][0].eval(0.0) - cl.lhat[j]).norm());
        }
        let minv = sol.mbig.clone().try_inverse().ok_or(Error::SingularM { cond: sol.cond })?;
        worst = worst.max(frob(&(minv - &cl.m_inv)));
    }
    Ok(worst)
}

/// Calibrated one-term GLM modulus against the Darboux soliton with pole i eta.
pub fn glm_cross_oracle(eta: f64) -> Result<crate::glm::Calibration> {
    let p = make_params(2, -1)?;
    let bare = BareOperatorSpec::default_for(&p);
    let spec = static_soliton_kernel(&bare, eta, &[c(1.0, 0.0)])?;
    let d = DressedField::new(
        SolitonSpec::new(p, vec![DarbouxPole::vector(I * eta, &[c(1.0, 0.0), c(1.0, 0.0)])?])?,
        DressingMode::Single(0),
    );
    let xs: Vec<f64> = (0..=400).map(|k| -10.0 + 0.05 * k as f64).collect();
    calibrate(&spec, &d, 0.0, &xs)
}

/// Criterion 6: GLM/Darboux cross-oracle, GLM equation residual, closed forms.
pub fn criterion6() -> Result<Vec<Check>> {
    let cal = glm_cross_oracle(1.0)?;
    let p2 = make_params(2, -1)?;
    let static_k = static_soliton_kernel(&BareOperatorSpec::default_for(&p2), 1.0, &[c(1.0, 0.0)])?;
    let bright = bright_soliton_kernel(&BareOperatorSpec::dispersive_for(&make_params(3, -1)?), 0.8, 0.3, &[c(1.0, 0.5), c(0.2, -1.0)])?;
    let (two, _) = two_term_kernel()?;
    let res = glm_equation_residual(&static_k)?.max(glm_equation_residual(&bright)?).max(glm_equation_residual(&two)?);
    let mut lin: f64 = 0.0;
    for (x, t) in [(0.2, 0.1), (-0.5, 0.6)] {
        let (a, b) = linear_residuals(&solve_glm(&two, x, t)?);
        lin = lin.max(a).max(b);
    }
    let closed = closed_form_mismatch(&bright)?.max(closed_form_mismatch(&static_k)?);
    Ok(vec![
        Check::below("6", "calibrated GLM modulus vs Darboux modulus on [-10, 10]", cal.max_abs_diff, 1e-8)
            .with_note(format!("fitted c = {:.12}", cal.c)),
        Check::below("6", "GLM equation residual (one- and two-term kernels)", res, 1e-10),
        Check::below("6", "closed-form L, L^, M^-1 vs linear solve", closed, 1e-12),
        Check::below("6", "relative residual of both linear systems", lin, 1e-12).diagnostic(),
    ])
}

pub const TE_STEPS: [f64; 3] = [0.02, 0.01, 0.005];

/// Criterion 7: kernel time evolution and trace identity orders.
pub fn criterion7() -> Result<Vec<Check>> {
    let bare = BareOperatorSpec::dispersive_for(&make_params(2, -1)?);
    let spec = bright_soliton_kernel(&bare, 1.0, 0.1, &[c(1.0, 0.0)])?;
    let mh = |x: f64, t: f64| m_hat_from_kernel(&spec, x, t);
    let zero = |_x: f64, _t: f64| Ok(CMat::zeros(2, 2));
    let (mut ev, mut tr, mut tr0) = (Vec::new(), Vec::new(), Vec::new());
    for &h in &TE_STEPS {
        let r = kernel_time_residual(&spec, bare.a, &mh, 0.3, 1.1, 0.2, h, h)?;
        ev.push(r.evolution);
        tr.push(r.trace);
        tr0.push(kernel_time_residual(&spec, bare.a, &zero, 0.3, 1.1, 0.2, h, h)?.trace);
    }
    Ok(vec![
        Check::at_least("7", "kernel evolution residual order", fitted_order(&TE_STEPS, &ev), 1.8)
            .with_note(format!("{:.2e} {:.2e} {:.2e}", ev[0], ev[1], ev[2])),
        Check::at_least("7", "trace identity residual order", fitted_order(&TE_STEPS, &tr), 1.8)
            .with_note(format!("{:.2e} {:.2e} {:.2e}", tr[0], tr[1], tr[2])),
        Check::at_least("7", "trace residual with M^ = 0 (expected floor)", tr0[2], 1e-2).diagnostic(),
    ])
}

pub const LATTICE_NCOMP: usize = 2;

/// Random lattice with an optional defect at a 0-based site.
pub fn random_lattice(nsites: usize, ncomp: usize, amplitude: f64, defect_site: Option<usize>, seed: u64) -> Result<LatticeState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = LatticeState::random(nsites, ncomp, amplitude, &mut rng)?;
    match defect_site {
        Some(site) => s.with_defect(Defect::random(site, ncomp, amplitude, &mut rng)),
        None => Ok(s),
    }
}

fn drift_note(r: &crate::dnls::DriftReport) -> String {
    match r.blowup_time {
        Some(tb) => format!("state blew up at t = {tb:.3}"),
        None => format!("drifts {:.2e} {:.2e} {:.2e}", r.rel_drift[0], r.rel_drift[1], r.rel_drift[2]),
    }
}

fn max3(a: [f64; 3]) -> f64 {
    a.iter().cloned().fold(0.0, f64::max)
}

/// Conservation run as specified (32 sites, amplitude 0.2, T = 10), plus the dt study.
pub fn lattice_conservation(nsites: usize, defect_site: Option<usize>, amplitude: f64, dt: f64, t_end: f64, seed: u64, form: Form, tol: f64) -> Result<Check> {
    let s = random_lattice(nsites, LATTICE_NCOMP, amplitude, defect_site, seed)?;
    let r = conservation_run(&s, dt, t_end, form)?;
    let tag = if defect_site.is_some() { "with defect" } else { "bulk" };
    Ok(Check::below("8", format!("max relative charge drift, {tag}, T={t_end}, dt={dt:e}"), max3(r.rel_drift), tol).with_note(drift_note(&r)))
}

/// Drift at several dt over a horizon and its fitted order.
pub fn drift_study(s: &LatticeState, dts: &[f64], t_end: f64, form: Form) -> Result<(Vec<f64>, f64, Option<f64>)> {
    let mut drifts = Vec::new();
    let mut blow = None;
    for &dt in dts {
        let r = conservation_run(s, dt, t_end, form)?;
        blow = blow.or(r.blowup_time);
        drifts.push(max3(r.rel_drift));
    }
    Ok((drifts.clone(), fitted_order(dts, &drifts), blow))
}

pub const DRIFT_DTS: [f64; 3] = [4e-3, 2e-3, 1e-3];
pub const SHORT_HORIZON: f64 = 0.5;

/// Criterion 8 with the supplementary short-horizon study.
pub fn criterion8(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for site in [None, Some(15)] {
        let s = random_lattice(32, LATTICE_NCOMP, 0.2, site, seed)?;
        let tag = if site.is_some() { "site-16 defect" } else { "bulk" };
        let r = conservation_run(&s, 1e-3, 10.0, Form::Corrected)?;
        out.push(Check::below("8", format!("relative drift I1..I3, {tag}, T=10, dt=1e-3"), max3(r.rel_drift), 1e-8).with_note(drift_note(&r)));
        let (d, order, blow) = drift_study(&s, &DRIFT_DTS, 10.0, Form::Corrected)?;
        out.push(
            Check::at_least("8", format!("drift order over dt {{4,2,1}}e-3, {tag}, T=10"), if blow.is_some() { f64::NAN } else { order }, 3.5)
                .with_note(match blow {
                    Some(tb) => format!("runs blow up (first at t = {tb:.3}), order undefined"),
                    None => format!("{:.2e} {:.2e} {:.2e}", d[0], d[1], d[2]),
                }),
        );
        let (d, order, _) = drift_study(&s, &DRIFT_DTS, SHORT_HORIZON, Form::Corrected)?;
        out.push(Check::below("8s", format!("relative drift, {tag}, T={SHORT_HORIZON}, dt=1e-3"), d[2], 1e-8).diagnostic());
        out.push(
            Check::at_least("8s", format!("drift order, {tag}, T={SHORT_HORIZON}"), order, 3.5)
                .diagnostic()
                .with_note(format!("{:.2e} {:.2e} {:.2e}", d[0], d[1], d[2])),
        );
        if site.is_some() {
            let (d, _, _) = drift_study(&s, &[1e-3], SHORT_HORIZON, Form::AsPrinted)?;
            out.push(Check::below("8s", format!("as-printed EOM and I3, {tag}, T={SHORT_HORIZON}, dt=1e-3"), d[0], 1e-8).diagnostic());
        }
    }
    Ok(out)
}

pub const ZCC_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

fn class_name(c: SiteClass) -> &'static str {
    match c {
        SiteClass::Bulk => "bulk",
        SiteClass::Minus2 => "n-2",
        SiteClass::Minus1 => "n-1",
        SiteClass::Defect => "n",
        SiteClass::Plus1 => "n+1",
        SiteClass::Plus2 => "n+2",
    }
}

/// zcc_discrete orders for one representative site per class.
pub fn zcc_orders(s: &LatticeState, lambda: C64, mu: C64, form: Form) -> Result<Vec<(SiteClass, usize, f64, Vec<f64>)>> {
    let mut reps: Vec<(SiteClass, usize)> = Vec::new();
    for j in 0..s.nsites() {
        let cls = site_class(s, j);
        if !reps.iter().any(|(c, _)| *c == cls) {
            reps.push((cls, j));
        }
    }
    reps.iter()
        .map(|&(cls, j)| {
            let errs: Vec<f64> = ZCC_STEPS.iter().map(|&h| zcc_discrete(s, j, lambda, mu, h, form)).collect::<Result<_>>()?;
            Ok((cls, j, fitted_order(&ZCC_STEPS, &errs), errs))
        })
        .collect()
}

/// Criterion 9: discrete zero-curvature orders per site class.
pub fn criterion9(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let s = random_lattice(16, LATTICE_NCOMP, 0.2, Some(8), seed)?;
    for l in [2.0, 5.0] {
        for m in [2.0, 5.0] {
            let diag = l == m;
            for form in [Form::Corrected, Form::AsPrinted] {
                if !diag && form == Form::AsPrinted {
                    continue;
                }
                for (cls, _, order, errs) in zcc_orders(&s, c(l, 0.0), c(m, 0.0), form)? {
                    let f = if form == Form::Corrected { "" } else { ", as-printed EOM" };
                    let mut ck = Check::at_least("9", format!("zcc order, {} (lambda, mu) = ({l}, {m}){f}", class_name(cls)), order, 1.8)
                        .with_note(format!("{:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2]));
                    if !diag {
                        ck = ck.diagnostic().with_note(format!("lambda != mu is not a zero-curvature pair; residual floor {:.2e}", errs[2]));
                    } else if form == Form::AsPrinted {
                        ck = ck.diagnostic();
                    }
                    out.push(ck);
                }
            }
        }
    }
    Ok(out)
}

/// Criterion 10: ln-tau fit against the closed-form charges.
pub fn criterion10(seed: u64) -> Result<Vec<Check>> {
    let samples = default_lambda_samples();
    let bulk = random_lattice(32, LATTICE_NCOMP, 0.1, None, seed)?;
    let fb = lntau_check(&bulk, &samples)?;
    let defect = random_lattice(32, LATTICE_NCOMP, 0.1, Some(15), seed)?;
    let fd = lntau_check(&defect, &samples)?;
    let printed = charges_defect(&defect, Form::AsPrinted)?;
    Ok(vec![
        Check::below("10", "ln-tau fit vs closed-form charges, bulk", fb.charges.max_diff(&charges_bulk(&bulk)?), 1e-6),
        Check::below("10", "ln-tau fit vs closed-form charges, defect", fd.charges.max_diff(&charges_defect(&defect, Form::Corrected)?), 1e-6),
        Check::below("10", "ln-tau fit vs as-printed defect I3", (fd.charges.i3 - printed.i3).norm(), 1e-6).diagnostic(),
    ])
}

/// Criterion 11: involution of the charges under the lattice bracket.
pub fn criterion11(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (tag, site) in [("bulk", None), ("defect", Some(8))] {
        let s = random_lattice(16, LATTICE_NCOMP, 0.2, site, seed)?;
        for form in [Form::Corrected, Form::AsPrinted] {
            if site.is_none() && form == Form::AsPrinted {
                continue;
            }
            let get = |k: usize| move |st: &LatticeState| -> Result<C64> {
                let q = if st.defect.is_some() { charges_defect(st, form)? } else { charges_bulk(st)? };
                Ok(q.as_array()[k])
            };
            for (m, n) in [(0, 1), (0, 2), (1, 2)] {
                let v = poisson_bracket(&get(m), &get(n), &s, 1e-5, form)?.norm();
                let mut ck = Check::below("11", format!("|{{I{}, I{}}}|, {tag}", m + 1, n + 1), v, 1e-6);
                if form == Form::AsPrinted {
                    ck = Check::below("11", format!("|{{I{}, I{}}}|, {tag}, as-printed bracket and I3", m + 1, n + 1), v, 1e-6).diagnostic();
                }
                out.push(ck);
            }
        }
    }
    Ok(out)
}

fn cramer_spec(n: usize, poles: usize, rng: &mut ChaCha8Rng) -> Result<SolitonSpec> {
    let mus = [c(0.5, 1.0), c(-0.3, 0.8), c(0.1, 1.3)];
    let ps = (0..poles)
        .map(|i| {
            let cv: Vec<C64> = (0..n).map(|_| rand_c(rng, 1.0) + c(1.0, 0.0)).collect();
            DarbouxPole::vector(mus[i], &cv)
        })
        .collect::<Result<Vec<_>>>()?;
    SolitonSpec::new(make_params(n, -1)?, ps)
}

/// Criterion 12: literal cofactor expansions vs the dense solve.
pub fn criterion12(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pw, mut uw) = (0.0f64, 0.0f64);
    for n in [2, 3] {
        for poles in 1..=3 {
            let spec = cramer_spec(n, poles, &mut rng)?;
            for (x, t) in [(-1.5, 0.0), (0.0, 0.3), (0.7, -0.2), (2.0, 0.5)] {
                let a = multi_pole_p(&spec, x, t)?;
                let b = multi_pole_p_cramer(&spec, x, t)?;
                for (p, q) in a.p.iter().zip(&b.p) {
                    pw = pw.max((p - q).norm() / p.norm().max(f64::MIN_POSITIVE));
                }
                let u1 = n_soliton(&spec, x, t)?;
                let u2 = n_soliton_tau(&spec, x, t)?;
                let d: Vec<C64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
                uw = uw.max(vec_norm(&d) / vec_norm(&u1).max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(vec![
        Check::below("12", "Cramer p_i vs dense solve (relative)", pw, 1e-10),
        Check::below("12", "tau-ratio field vs dense-solve field (relative)", uw, 1e-10),
    ])
}

/// Lax parameters used by the CLI soliton commands.
pub fn params_for(ncomp: usize, kappa: i32) -> Result<LaxParams> {
    make_params(ncomp + 1, kappa)
}
