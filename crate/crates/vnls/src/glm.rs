//! Gelfand–Levitan–Marchenko inversion for degenerate (separable) kernels.
//!
//! The kernel data are pure exponentials, so every integral over [x, inf) is done in
//! closed form: int_x^inf e^{i k y} dy = -e^{i k x} / (i k) for Im k > 0.

use crate::darboux::DressedField;
use crate::error::{Error, Result};
use crate::field::FieldClosure;
use crate::lax_core::LaxParams;
use crate::linalg::{cond2, frob, lu_solve, CMat, C64, COND_CEILING, I};

/// Bare operator data: M = diag(alpha_consts) in the first operator and the coefficient `a` of i d/dt.
#[derive(Debug, Clone, PartialEq)]
pub struct BareOperatorSpec {
    pub alpha_consts: Vec<f64>,
    pub a: f64,
}

impl BareOperatorSpec {
    pub fn new(alpha_consts: Vec<f64>, a: f64) -> Result<Self> {
        if alpha_consts.len() < 2 {
            return Err(Error::InvalidParams("need at least two alpha constants".into()));
        }
        if alpha_consts.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParams("alpha constants must be finite and nonzero".into()));
        }
        if a == 0.0 || !a.is_finite() {
            return Err(Error::InvalidParams("a must be finite and nonzero".into()));
        }
        Ok(Self { alpha_consts, a })
    }

    /// diag(1, -1, ..., -1) with a = (1 - N) / N.
    pub fn default_for(params: &LaxParams) -> Self {
        let mut al = vec![-1.0; params.n];
        al[0] = 1.0;
        Self { alpha_consts: al, a: params.a }
    }

    /// diag(1, -1/r, ..., -1/r) with r = (1 + a) / (1 - a), which makes the kernel time dependent
    /// and the reconstructed field a solution of the vNLS equation.
    pub fn dispersive_for(params: &LaxParams) -> Self {
        let r = (1.0 + params.a) / (1.0 - params.a);
        let mut al = vec![-1.0 / r; params.n];
        al[0] = 1.0;
        Self { alpha_consts: al, a: params.a }
    }

    pub fn n(&self) -> usize {
        self.alpha_consts.len()
    }
}

/// One spectral term of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTerm {
    pub b: C64,
    pub bh: C64,
    pub lam: C64,
    pub mu: C64,
    pub lamh: C64,
    pub muh: C64,
    pub big_lam: C64,
    pub big_lamh: C64,
}

impl KernelTerm {
    /// Fills mu, muh from the direction constraints and Lambda, Lambda-hat from the dispersion
    /// relations for component `comp` (0-based, i.e. matrix index comp + 1).
    pub fn from_spectral(bare: &BareOperatorSpec, comp: usize, b: C64, bh: C64, lam: C64, lamh: C64) -> Self {
        let a1 = bare.alpha_consts[0];
        let aj = bare.alpha_consts[comp + 1];
        let mu = -lam * a1 / aj;
        let muh = -lamh * aj / a1;
        Self {
            b,
            bh,
            lam,
            mu,
            lamh,
            muh,
            big_lam: (lam * lam - mu * mu) / bare.a,
            big_lamh: (lamh * lamh - muh * muh) / bare.a,
        }
    }
}

/// Kernel data: `terms[j][alpha]` for component j = 0..N-2 (matrix index j + 1); every component
/// carries the same number of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub terms: Vec<Vec<KernelTerm>>,
}

impl KernelSpec {
    pub fn ncomp(&self) -> usize {
        self.terms.len()
    }

    pub fn nterms(&self) -> usize {
        self.terms.first().map_or(0, |v| v.len())
    }

    pub fn n(&self) -> usize {
        self.ncomp() + 1
    }
}

const DISPERSION_TOL: f64 = 1e-10;

/// Checks dispersion, direction and decay constraints.
pub fn validate_kernel(spec: &KernelSpec, bare: &BareOperatorSpec) -> Result<KernelSpec> {
    let nc = spec.ncomp();
    if nc == 0 || spec.nterms() == 0 {
        return Err(Error::InvalidParams("kernel needs at least one component and one term".into()));
    }
    if spec.terms.iter().any(|v| v.len() != spec.nterms()) {
        return Err(Error::InvalidParams("every component needs the same number of terms".into()));
    }
    if bare.n() != nc + 1 {
        return Err(Error::InvalidParams(format!("bare operator has size {}, kernel needs {}", bare.n(), nc + 1)));
    }
    let a1 = bare.alpha_consts[0];
    for (j, comp) in spec.terms.iter().enumerate() {
        let aj = bare.alpha_consts[j + 1];
        for (al, t) in comp.iter().enumerate() {
            let scale = 1.0 + t.lam.norm_sqr() + t.mu.norm_sqr();
            if (bare.a * t.big_lam - (t.lam * t.lam - t.mu * t.mu)).norm() > DISPERSION_TOL * scale {
                return Err(Error::DispersionMismatch(format!("component {j}, term {al}: a Lambda != lambda^2 - mu^2")));
            }
            let scale = 1.0 + t.lamh.norm_sqr() + t.muh.norm_sqr();
            if (bare.a * t.big_lamh - (t.lamh * t.lamh - t.muh * t.muh)).norm() > DISPERSION_TOL * scale {
                return Err(Error::DispersionMismatch(format!("component {j}, term {al}: a Lambda^ != lambda^^2 - mu^^2")));
            }
            if (a1 * t.lam + aj * t.mu).norm() > DISPERSION_TOL * (1.0 + t.lam.norm()) {
                return Err(Error::DispersionMismatch(format!("component {j}, term {al}: direction constraint on (lambda, mu)")));
            }
            if (aj * t.lamh + a1 * t.muh).norm() > DISPERSION_TOL * (1.0 + t.lamh.norm()) {
                return Err(Error::DispersionMismatch(format!("component {j}, term {al}: direction constraint on (lambda^, mu^)")));
            }
        }
    }
    for (j, comp) in spec.terms.iter().enumerate() {
        for (be, tb) in comp.iter().enumerate() {
            for (ga, tg) in comp.iter().enumerate() {
                if !((tg.lamh + tb.mu).im > 0.0) {
                    return Err(Error::NonDecaying(format!("component {j}: Im(lambda^_{ga} + mu_{be}) <= 0")));
                }
            }
        }
    }
    for (i, ci) in spec.terms.iter().enumerate() {
        for (j, cj) in spec.terms.iter().enumerate() {
            for tg in ci {
                for ta in cj {
                    if !((ta.lam + tg.muh).im > 0.0) {
                        return Err(Error::NonDecaying(format!("components {i}, {j}: Im(lambda + mu^) <= 0")));
                    }
                }
            }
        }
    }
    Ok(spec.clone())
}

fn e(z: C64) -> C64 {
    z.exp()
}

/// P[j] (n x n, entries P_jj^{beta gamma}) and P-hat[i][j] (n x n, entries P^_ij^{gamma alpha}).
#[derive(Debug, Clone)]
pub struct PMatrices {
    pub p: Vec<CMat>,
    pub ph: Vec<Vec<CMat>>,
}

pub fn build_pmatrices(spec: &KernelSpec, x: f64, t: f64) -> PMatrices {
    let n = spec.nterms();
    let p = spec
        .terms
        .iter()
        .map(|c| {
            CMat::from_fn(n, n, |be, ga| {
                let (tb, tg) = (&c[be], &c[ga]);
                let k = tg.lamh + tb.mu;
                -tg.bh * e(I * tg.big_lamh * t + I * k * x) / (I * k)
            })
        })
        .collect();
    let ph = spec
        .terms
        .iter()
        .map(|ci| {
            spec.terms
                .iter()
                .map(|cj| {
                    CMat::from_fn(n, n, |ga, al| {
                        let (tg, ta) = (&ci[ga], &cj[al]);
                        let k = ta.lam + tg.muh;
                        -ta.b * e(I * ta.big_lam * t + I * k * x) / (I * k)
                    })
                })
                .collect()
        })
        .collect();
    PMatrices { p, ph }
}

/// Exponential sum z -> sum_k c_k e^{i w_k z}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpSum {
    pub terms: Vec<(C64, C64)>,
}

impl ExpSum {
    pub fn eval(&self, z: f64) -> C64 {
        self.terms.iter().map(|(c, w)| c * e(I * w * z)).sum()
    }
}

/// Solved GLM system at a fixed (x, t).
#[derive(Debug, Clone)]
pub struct GlmSolution {
    pub spec: KernelSpec,
    pub x: f64,
    pub t: f64,
    pub pm: PMatrices,
    /// The block matrix M, rows and columns indexed by (component, term).
    pub mbig: CMat,
    /// L_j^(alpha), shape (N-1) x n.
    pub l: CMat,
    /// L_ij^(alpha): `lij[i]` has shape (N-1) x n with rows indexed by j.
    pub lij: Vec<CMat>,
    pub cond: f64,
}

fn xvec(spec: &KernelSpec, x: f64, t: f64) -> CMat {
    CMat::from_fn(spec.ncomp(), spec.nterms(), |j, al| {
        let tm = &spec.terms[j][al];
        tm.b * e(I * tm.big_lam * t + I * tm.lam * x)
    })
}

fn xhat(spec: &KernelSpec, x: f64, t: f64) -> CMat {
    CMat::from_fn(spec.ncomp(), spec.nterms(), |j, al| {
        let tm = &spec.terms[j][al];
        tm.bh * e(I * tm.big_lamh * t + I * tm.lamh * x)
    })
}

fn big_m(spec: &KernelSpec, pm: &PMatrices) -> CMat {
    let (nc, n) = (spec.ncomp(), spec.nterms());
    CMat::from_fn(nc * n, nc * n, |r, c| {
        let (i, be) = (r / n, r % n);
        let (j, al) = (c / n, c % n);
        let delta = if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        let s: C64 = (0..n).map(|ga| pm.p[i][(be, ga)] * pm.ph[i][j][(ga, al)]).sum();
        delta - s
    })
}

/// Flattens an (N-1) x n block into a row vector indexed by (component, term).
fn flat(m: &CMat) -> CMat {
    let (r, c) = (m.nrows(), m.ncols());
    CMat::from_fn(1, r * c, |_, k| m[(k / c, k % c)])
}

fn unflat(v: &CMat, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |i, j| v[(0, i * c + j)])
}

/// Solves L M = -X (first system) and L_i M = sum_beta X^_i P^_i (second system).
pub fn solve_glm(spec: &KernelSpec, x: f64, t: f64) -> Result<GlmSolution> {
    let pm = build_pmatrices(spec, x, t);
    let mbig = big_m(spec, &pm);
    let cond = cond2(&mbig);
    if cond > COND_CEILING {
        return Err(Error::SingularM { cond });
    }
    let (nc, n) = (spec.ncomp(), spec.nterms());
    let mt = mbig.transpose();
    let rhs1 = -flat(&xvec(spec, x, t));
    let l_row = lu_solve(&mt, &rhs1.transpose()).ok_or(Error::SingularM { cond })?.transpose();
    let l = unflat(&l_row, nc, n);

    let xh = xhat(spec, x, t);
    let mut lij = Vec::with_capacity(nc);
    for i in 0..nc {
        let r = CMat::from_fn(nc, n, |j, al| (0..n).map(|be| xh[(i, be)] * pm.ph[i][j][(be, al)]).sum());
        let sol = lu_solve(&mt, &flat(&r).transpose()).ok_or(Error::SingularM { cond })?.transpose();
        lij.push(unflat(&sol, nc, n));
    }
    Ok(GlmSolution { spec: spec.clone(), x, t, pm, mbig, l, lij, cond })
}

/// First-system solve only (the L part).
pub fn solve_l(spec: &KernelSpec, x: f64, t: f64) -> Result<GlmSolution> {
    solve_glm(spec, x, t)
}

/// Second-system solve (the L_ij, and through them K_ij and K_i1).
pub fn solve_lhat(spec: &KernelSpec, x: f64, t: f64) -> Result<GlmSolution> {
    solve_glm(spec, x, t)
}

/// Relative residuals of the two linear systems.
pub fn linear_residuals(sol: &GlmSolution) -> (f64, f64) {
    let spec = &sol.spec;
    let (nc, n) = (spec.ncomp(), spec.nterms());
    let xv = flat(&xvec(spec, sol.x, sol.t));
    let r1 = frob(&(flat(&sol.l) * &sol.mbig + &xv)) / frob(&xv).max(f64::MIN_POSITIVE);
    let xh = xhat(spec, sol.x, sol.t);
    let mut r2: f64 = 0.0;
    for i in 0..nc {
        let r = CMat::from_fn(nc, n, |j, al| (0..n).map(|be| xh[(i, be)] * sol.pm.ph[i][j][(be, al)]).sum());
        let fr = flat(&r);
        r2 = r2.max(frob(&(flat(&sol.lij[i]) * &sol.mbig - &fr)) / frob(&fr).max(f64::MIN_POSITIVE));
    }
    (r1, r2)
}

/// Assembled kernel entries as exponential sums in z, at the solution's (x, t).
#[derive(Debug, Clone)]
pub struct AssembledKernel {
    pub n: usize,
    /// entries[a][b] for matrix indices a, b in 0..N.
    pub entries: Vec<Vec<ExpSum>>,
}

impl AssembledKernel {
    pub fn eval(&self, z: f64) -> CMat {
        CMat::from_fn(self.n, self.n, |a, b| self.entries[a][b].eval(z))
    }
}

/// K_1j = sum L_j Z_j, K_11 = -sum L_j P_jj Z^_j, K_ij = sum L_ij Z_j,
/// K_i1 = -sum X^_i Z^_i - sum_j L_ij P_jj Z^_j.
pub fn assemble_kernels(sol: &GlmSolution) -> AssembledKernel {
    let spec = &sol.spec;
    let (nc, n) = (spec.ncomp(), spec.nterms());
    let nn = nc + 1;
    let mut entries = vec![vec![ExpSum::default(); nn]; nn];
    let xh = xhat(spec, sol.x, sol.t);
    for j in 0..nc {
        for al in 0..n {
            entries[0][j + 1].terms.push((sol.l[(j, al)], spec.terms[j][al].mu));
        }
        for be in 0..n {
            for ga in 0..n {
                entries[0][0].terms.push((-sol.l[(j, be)] * sol.pm.p[j][(be, ga)], spec.terms[j][ga].muh));
            }
        }
    }
    for i in 0..nc {
        for j in 0..nc {
            for al in 0..n {
                entries[i + 1][j + 1].terms.push((sol.lij[i][(j, al)], spec.terms[j][al].mu));
            }
        }
        for be in 0..n {
            entries[i + 1][0].terms.push((-xh[(i, be)], spec.terms[i][be].muh));
        }
        for j in 0..nc {
            for be in 0..n {
                for ga in 0..n {
                    entries[i + 1][0].terms.push((-sol.lij[i][(j, be)] * sol.pm.p[j][(be, ga)], spec.terms[j][ga].muh));
                }
            }
        }
    }
    AssembledKernel { n: nn, entries }
}

/// F(y, z) entries as separable terms c e^{i k y} e^{i w z}: (matrix row, col, c, k, w).
fn f_terms(spec: &KernelSpec, t: f64) -> Vec<(usize, usize, C64, C64, C64)> {
    let mut out = Vec::new();
    for (j, comp) in spec.terms.iter().enumerate() {
        for tm in comp {
            out.push((0, j + 1, tm.b * e(I * tm.big_lam * t), tm.lam, tm.mu));
            out.push((j + 1, 0, tm.bh * e(I * tm.big_lamh * t), tm.lamh, tm.muh));
        }
    }
    out
}

/// F(x, z) at time t.
pub fn f_matrix(spec: &KernelSpec, x: f64, z: f64, t: f64) -> CMat {
    let nn = spec.n();
    let mut m = CMat::zeros(nn, nn);
    for (a, b, c, k, w) in f_terms(spec, t) {
        m[(a, b)] += c * e(I * k * x) * e(I * w * z);
    }
    m
}

/// ||K(x, z) + F(x, z) + int_x^inf K(x, y) F(y, z) dy||_F with the integral done exactly.
pub fn glm_residual(kern: &AssembledKernel, spec: &KernelSpec, x: f64, z: f64, t: f64) -> f64 {
    let mut r = kern.eval(z) + f_matrix(spec, x, z, t);
    for (c_row, b, cf, k, w) in f_terms(spec, t) {
        for a in 0..kern.n {
            for (ck, wk) in &kern.entries[a][c_row].terms {
                let s = wk + k;
                let integral = -e(I * s * x) / (I * s);
                r[(a, b)] += ck * cf * integral * e(I * w * z);
            }
        }
    }
    frob(&r)
}

/// Solves and assembles the kernel at (x, t).
pub fn kernel_at(spec: &KernelSpec, x: f64, t: f64) -> Result<AssembledKernel> {
    Ok(assemble_kernels(&solve_glm(spec, x, t)?))
}

/// K(x, y) at time t.
pub fn kernel_value(spec: &KernelSpec, x: f64, y: f64, t: f64) -> Result<CMat> {
    Ok(kernel_at(spec, x, t)?.eval(y))
}

/// Default reconstruction constant.
pub const DEFAULT_C: f64 = -2.0;

/// u_{j-1}(x, t) = c K_1j(x, x).
pub fn reconstruct_fields(spec: &KernelSpec, c: f64, x: f64, t: f64) -> Result<Vec<C64>> {
    let k = kernel_at(spec, x, t)?;
    Ok((0..spec.ncomp()).map(|j| k.entries[0][j + 1].eval(x) * c).collect())
}

/// The reconstructed field as a closure.
#[derive(Debug, Clone)]
pub struct GlmField {
    pub spec: KernelSpec,
    pub c: f64,
}

impl FieldClosure for GlmField {
    fn n_comp(&self) -> usize {
        self.spec.ncomp()
    }
    fn eval(&self, x: f64, t: f64) -> Result<Vec<C64>> {
        reconstruct_fields(&self.spec, self.c, x, t)
    }
}

/// Closed-form one-term quantities (all components sharing lambda, mu, lambda^, mu^).
#[derive(Debug, Clone)]
pub struct OneTermClosed {
    pub c: C64,
    pub h: C64,
    pub l: Vec<C64>,
    pub lhat: Vec<C64>,
    /// P = H b^ b^T as a matrix over components.
    pub pbig: CMat,
    pub m_inv: CMat,
}

pub fn one_soliton_closed(spec: &KernelSpec, x: f64, t: f64) -> Result<OneTermClosed> {
    if spec.nterms() != 1 {
        return Err(Error::InvalidParams("closed form needs exactly one spectral term".into()));
    }
    let t0 = spec.terms[0][0];
    let same = spec.terms.iter().all(|c| {
        let s = c[0];
        (s.lam - t0.lam).norm() < 1e-14
            && (s.mu - t0.mu).norm() < 1e-14
            && (s.lamh - t0.lamh).norm() < 1e-14
            && (s.muh - t0.muh).norm() < 1e-14
    });
    if !same {
        return Err(Error::InvalidParams("closed form needs shared spectral parameters".into()));
    }
    let nc = spec.ncomp();
    let cc: C64 = spec.terms.iter().map(|c| c[0].b * c[0].bh).sum();
    let h = e(I * (t0.big_lamh + t0.big_lam) * t + I * (t0.lam + t0.mu + t0.lamh + t0.muh) * x)
        / ((t0.lam + t0.muh) * (t0.lamh + t0.mu));
    let den = C64::new(1.0, 0.0) + cc * h;
    let l = spec.terms.iter().map(|c| -c[0].b * e(I * c[0].big_lam * t + I * c[0].lam * x) / den).collect();
    let lhat = spec.terms.iter().map(|c| -c[0].bh * e(I * c[0].big_lamh * t + I * c[0].lamh * x) / den).collect();
    let pbig = CMat::from_fn(nc, nc, |i, j| h * spec.terms[i][0].bh * spec.terms[j][0].b);
    let m_inv = CMat::identity(nc, nc) - &pbig / den;
    Ok(OneTermClosed { c: cc, h, l, lhat, pbig, m_inv })
}

/// One-term kernel for a bright soliton of amplitude `eta` with unit polarization `pol`,
/// velocity parameter `xi` (real part of lambda scaled), under a bare operator of the form
/// diag(1, -1/r, ..., -1/r).
///
/// With mu = r lambda, the conjugation choice lambda^ = -mu*, mu^ = -lambda* makes
/// lambda + mu^ and lambda^ + mu purely imaginary, and b^_j = b_j* / (eta^2 H0) normalises
/// the peak of |u| (with c = -2) to eta, H0 = 1 / ((lambda + mu^)(lambda^ + mu)).
pub fn bright_soliton_kernel(bare: &BareOperatorSpec, eta: f64, xi: f64, pol: &[C64]) -> Result<KernelSpec> {
    let nc = bare.n() - 1;
    if pol.len() != nc {
        return Err(Error::InvalidParams(format!("polarization needs {nc} components")));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidParams("amplitude must be positive".into()));
    }
    let a1 = bare.alpha_consts[0];
    let r = -a1 / bare.alpha_consts[1];
    if bare.alpha_consts[1..].iter().any(|&v| (v - bare.alpha_consts[1]).abs() > 0.0) || !(r > 0.0) {
        return Err(Error::InvalidParams("bright soliton kernel needs diag(1, -1/r, ..., -1/r) with r > 0".into()));
    }
    let nrm = crate::linalg::vec_norm(pol);
    let lam = C64::new(xi, eta / (1.0 + r));
    let mu = lam * r;
    let lamh = -mu.conj();
    let h0 = C64::new(1.0, 0.0) / ((lam - lam.conj()) * (lamh + mu));
    let terms = (0..nc)
        .map(|j| {
            let b = pol[j] / nrm;
            let bh = b.conj() / (h0 * eta * eta);
            vec![KernelTerm::from_spectral(bare, j, b, bh, lam, lamh)]
        })
        .collect();
    validate_kernel(&KernelSpec { terms }, bare)
}

/// Static one-term kernel with lambda = mu = lambda^ = mu^ = i eta / 2 under diag(1, -1, ..., -1).
/// Its field modulus with c = -2 is eta sech(eta x), the modulus of the Darboux soliton with pole i eta.
pub fn static_soliton_kernel(bare: &BareOperatorSpec, eta: f64, pol: &[C64]) -> Result<KernelSpec> {
    let nc = bare.n() - 1;
    if pol.len() != nc {
        return Err(Error::InvalidParams(format!("polarization needs {nc} components")));
    }
    let nrm = crate::linalg::vec_norm(pol);
    let k = C64::new(0.0, eta / 2.0);
    let terms = (0..nc)
        .map(|j| {
            let b = pol[j] / nrm;
            // C H = -|b|^2 e^{-2 eta x} and c K_1j(x, x) = eta b_j sech(eta x)
            let bh = -b.conj() * eta * eta;
            vec![KernelTerm::from_spectral(bare, j, b, bh, k, k)]
        })
        .collect();
    validate_kernel(&KernelSpec { terms }, bare)
}

/// Fitted reconstruction constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Constant with the sign of the default and the fitted magnitude.
    pub c: f64,
    /// Largest | |u_glm| - |u_darboux| | after calibration.
    pub max_abs_diff: f64,
}

/// Fits |c| by least squares so that |c K_1j(x, x)| matches the Darboux modulus at the sample points.
pub fn calibrate(spec: &KernelSpec, reference: &DressedField, t: f64, xs: &[f64]) -> Result<Calibration> {
    let mut kk = Vec::with_capacity(xs.len());
    let mut uu = Vec::with_capacity(xs.len());
    for &x in xs {
        let k = reconstruct_fields(spec, 1.0, x, t)?;
        kk.push(crate::linalg::vec_norm(&k));
        uu.push(crate::linalg::vec_norm(&reference.eval(x, t)?));
    }
    let num: f64 = kk.iter().zip(&uu).map(|(a, b)| a * b).sum();
    let den: f64 = kk.iter().map(|a| a * a).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidParams("kernel vanishes on the calibration points".into()));
    }
    let mag = num / den;
    let max_abs_diff = kk.iter().zip(&uu).map(|(a, b)| (mag * a - b).abs()).fold(0.0, f64::max);
    Ok(Calibration { c: DEFAULT_C.signum() * mag, max_abs_diff })
}

/// d/dx K(x, x) computed from the exact x-derivatives of the linear systems.
pub fn kernel_diagonal_derivative(spec: &KernelSpec, x: f64, t: f64) -> Result<CMat> {
    let sol = solve_glm(spec, x, t)?;
    let (nc, n) = (spec.ncomp(), spec.nterms());
    let pm = &sol.pm;
    // x-derivatives of the exponential building blocks
    let dp: Vec<CMat> = (0..nc)
        .map(|j| CMat::from_fn(n, n, |be, ga| I * (spec.terms[j][ga].lamh + spec.terms[j][be].mu) * pm.p[j][(be, ga)]))
        .collect();
    let dph: Vec<Vec<CMat>> = (0..nc)
        .map(|i| {
            (0..nc)
                .map(|j| CMat::from_fn(n, n, |ga, al| I * (spec.terms[j][al].lam + spec.terms[i][ga].muh) * pm.ph[i][j][(ga, al)]))
                .collect()
        })
        .collect();
    let dm = CMat::from_fn(nc * n, nc * n, |r, c| {
        let (i, be) = (r / n, r % n);
        let (j, al) = (c / n, c % n);
        -(0..n)
            .map(|ga| dp[i][(be, ga)] * pm.ph[i][j][(ga, al)] + pm.p[i][(be, ga)] * dph[i][j][(ga, al)])
            .sum::<C64>()
    });
    let xv = xvec(spec, x, t);
    let dxv = CMat::from_fn(nc, n, |j, al| I * spec.terms[j][al].lam * xv[(j, al)]);
    let xh = xhat(spec, x, t);
    let dxh = CMat::from_fn(nc, n, |j, al| I * spec.terms[j][al].lamh * xh[(j, al)]);
    let mt = sol.mbig.transpose();
    let cond = sol.cond;

    // L' M = -(X' + L M')
    let rhs = -(flat(&dxv) + flat(&sol.l) * &dm);
    let dl = unflat(&lu_solve(&mt, &rhs.transpose()).ok_or(Error::SingularM { cond })?.transpose(), nc, n);
    let mut dlij = Vec::with_capacity(nc);
    for i in 0..nc {
        let dr = CMat::from_fn(nc, n, |j, al| {
            (0..n).map(|be| dxh[(i, be)] * pm.ph[i][j][(be, al)] + xh[(i, be)] * dph[i][j][(be, al)]).sum()
        });
        let rhs = flat(&dr) - flat(&sol.lij[i]) * &dm;
        dlij.push(unflat(&lu_solve(&mt, &rhs.transpose()).ok_or(Error::SingularM { cond })?.transpose(), nc, n));
    }

    let nn = nc + 1;
    let mut out = CMat::zeros(nn, nn);
    for j in 0..nc {
        for al in 0..n {
            let w = spec.terms[j][al].mu;
            out[(0, j + 1)] += (dl[(j, al)] + I * w * sol.l[(j, al)]) * e(I * w * x);
        }
        for be in 0..n {
            for ga in 0..n {
                let w = spec.terms[j][ga].muh;
                let v = sol.l[(j, be)] * pm.p[j][(be, ga)];
                let dv = dl[(j, be)] * pm.p[j][(be, ga)] + sol.l[(j, be)] * dp[j][(be, ga)];
                out[(0, 0)] -= (dv + I * w * v) * e(I * w * x);
            }
        }
    }
    for i in 0..nc {
        for j in 0..nc {
            for al in 0..n {
                let w = spec.terms[j][al].mu;
                out[(i + 1, j + 1)] += (dlij[i][(j, al)] + I * w * sol.lij[i][(j, al)]) * e(I * w * x);
            }
        }
        for be in 0..n {
            let w = spec.terms[i][be].muh;
            out[(i + 1, 0)] -= (dxh[(i, be)] + I * w * xh[(i, be)]) * e(I * w * x);
        }
        for j in 0..nc {
            for be in 0..n {
                for ga in 0..n {
                    let w = spec.terms[j][ga].muh;
                    let v = sol.lij[i][(j, be)] * pm.p[j][(be, ga)];
                    let dv = dlij[i][(j, be)] * pm.p[j][(be, ga)] + sol.lij[i][(j, be)] * dp[j][(be, ga)];
                    out[(i + 1, 0)] -= (dv + I * w * v) * e(I * w * x);
                }
            }
        }
    }
    Ok(out)
}

/// Dressed potential M^(x) = 2 d/dx K(x, x) on the vacuum (M = 0) for the upper kernel.
pub fn m_hat_from_kernel(spec: &KernelSpec, x: f64, t: f64) -> Result<CMat> {
    Ok(kernel_diagonal_derivative(spec, x, t)? * C64::new(2.0, 0.0))
}

/// Residuals of the kernel time evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEvolutionResidual {
    /// ||i a K_t - K_xx + K_yy - M^(x) K(x, y)||_F.
    pub evolution: f64,
    /// ||2 d/dx K(x, x) - (M^ - M)(x)||_F.
    pub trace: f64,
}

/// Evaluates both residuals with central differences of step `h` in x, y and `ht` in t.
pub fn kernel_time_residual(
    spec: &KernelSpec,
    a: f64,
    m_hat: &dyn Fn(f64, f64) -> Result<CMat>,
    x: f64,
    y: f64,
    t: f64,
    h: f64,
    ht: f64,
) -> Result<TimeEvolutionResidual> {
    if !(h > 0.0) || !(ht > 0.0) {
        return Err(Error::InvalidParams("finite-difference steps must be positive".into()));
    }
    let k = |xx: f64, yy: f64, tt: f64| kernel_value(spec, xx, yy, tt);
    let k0 = k(x, y, t)?;
    let kt = (k(x, y, t + ht)? - k(x, y, t - ht)?) / C64::new(2.0 * ht, 0.0);
    let kxx = (k(x + h, y, t)? - &k0 * C64::new(2.0, 0.0) + k(x - h, y, t)?) / C64::new(h * h, 0.0);
    let kyy = (k(x, y + h, t)? - &k0 * C64::new(2.0, 0.0) + k(x, y - h, t)?) / C64::new(h * h, 0.0);
    let mh = m_hat(x, t)?;
    let evolution = frob(&(kt * (I * a) - kxx + kyy - &mh * &k0));
    let kd = (k(x + h, x + h, t)? - k(x - h, x - h, t)?) / C64::new(2.0 * h, 0.0);
    let trace = frob(&(kd * C64::new(2.0, 0.0) - mh));
    Ok(TimeEvolutionResidual { evolution, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darboux::{DarbouxPole, DressingMode, SolitonSpec};
    use crate::field::{FieldGrid, GridSpec};
    use crate::lax_core::{make_params, vnls_residual};
    use crate::linalg::c;

    fn p2() -> LaxParams {
        make_params(2, -1).unwrap()
    }

    #[test]
    fn validate_examples() {
        let bare = BareOperatorSpec::default_for(&p2());
        let t = KernelTerm::from_spectral(&bare, 0, c(1.0, 0.0), c(-1.0, 0.0), I, I);
        assert!((t.mu - I).norm() < 1e-15);
        assert_eq!(t.big_lam, c(0.0, 0.0));
        assert!(validate_kernel(&KernelSpec { terms: vec![vec![t]] }, &bare).is_ok());
        let bad = KernelTerm::from_spectral(&bare, 0, c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        assert!(matches!(validate_kernel(&KernelSpec { terms: vec![vec![bad]] }, &bare), Err(Error::NonDecaying(_))));
        let mut off = t;
        off.big_lam += 1.0;
        assert!(matches!(validate_kernel(&KernelSpec { terms: vec![vec![off]] }, &bare), Err(Error::DispersionMismatch(_))));
    }

    #[test]
    fn kernel_terms_solve_linear_pdes() {
        // direct substitution of f = b e^{i Lambda t + i lambda x + i mu z} into both linear equations
        let bare = BareOperatorSpec::dispersive_for(&make_params(3, -1).unwrap());
        let t = KernelTerm::from_spectral(&bare, 1, c(0.4, 0.1), c(-0.2, 0.3), c(0.3, 0.8), c(-0.1, 0.4));
        let f = |x: f64, z: f64, tt: f64| t.b * (I * t.big_lam * tt + I * t.lam * x + I * t.mu * z).exp();
        let (x, z, tt, h) = (0.3, 0.9, 0.2, 1e-4);
        let ft = (f(x, z, tt + h) - f(x, z, tt - h)) / (2.0 * h);
        let fxx = (f(x + h, z, tt) - 2.0 * f(x, z, tt) + f(x - h, z, tt)) / (h * h);
        let fzz = (f(x, z + h, tt) - 2.0 * f(x, z, tt) + f(x, z - h, tt)) / (h * h);
        assert!((I * bare.a * ft - fxx + fzz).norm() < 1e-5);
        let fx = (f(x + h, z, tt) - f(x - h, z, tt)) / (2.0 * h);
        let fz = (f(x, z + h, tt) - f(x, z - h, tt)) / (2.0 * h);
        assert!((bare.alpha_consts[0] * fx + fz * bare.alpha_consts[2]).norm() < 1e-7);
    }

    #[test]
    fn pmatrix_examples() {
        let bare = BareOperatorSpec::dispersive_for(&p2());
        let spec = bright_soliton_kernel(&bare, 1.0, 0.0, &[c(1.0, 0.0)]).unwrap();
        let pm = build_pmatrices(&spec, 0.4, 0.3);
        let cl = one_soliton_closed(&spec, 0.4, 0.3).unwrap();
        // P P^ = -C H for one term, one component
        assert!((pm.p[0][(0, 0)] * pm.ph[0][0][(0, 0)] + cl.c * cl.h).norm() < 1e-14);
        let far = build_pmatrices(&spec, 60.0, 0.3);
        assert!(far.p[0][(0, 0)].norm() < 1e-12 && far.ph[0][0][(0, 0)].norm() < 1e-12);
        let mut zero = spec.clone();
        zero.terms[0][0].bh = c(0.0, 0.0);
        assert_eq!(build_pmatrices(&zero, 0.0, 0.0).p[0][(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn trivial_solutions() {
        let bare = BareOperatorSpec::dispersive_for(&make_params(3, -1).unwrap());
        let mut spec = bright_soliton_kernel(&bare, 1.0, 0.2, &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        for comp in spec.terms.iter_mut() {
            comp[0].bh = c(0.0, 0.0);
        }
        let sol = solve_glm(&spec, 0.3, 0.1).unwrap();
        let xv = xvec(&spec, 0.3, 0.1);
        assert!(frob(&(&sol.l + &xv)) < 1e-15);
        let k = assemble_kernels(&sol);
        assert!(k.entries[0][0].eval(0.7).norm() < 1e-15);
        let mut zero_b = bright_soliton_kernel(&bare, 1.0, 0.2, &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        for comp in zero_b.terms.iter_mut() {
            comp[0].b = c(0.0, 0.0);
        }
        let sol = solve_glm(&zero_b, 0.3, 0.1).unwrap();
        let k = assemble_kernels(&sol);
        let xh = xhat(&zero_b, 0.3, 0.1);
        for i in 0..2 {
            let want = -xh[(i, 0)] * (I * zero_b.terms[i][0].muh * 0.5).exp();
            assert!((k.entries[i + 1][0].eval(0.5) - want).norm() < 1e-15);
        }
        let r = reconstruct_fields(&zero_b, DEFAULT_C, 0.2, 0.0).unwrap();
        assert!(r.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn one_term_closed_forms() {
        let bare = BareOperatorSpec::dispersive_for(&make_params(3, -1).unwrap());
        let spec = bright_soliton_kernel(&bare, 0.8, 0.3, &[c(1.0, 0.5), c(0.2, -1.0)]).unwrap();
        for (x, t) in [(-1.0, 0.0), (0.3, 0.7), (2.0, -0.4)] {
            let sol = solve_glm(&spec, x, t).unwrap();
            let cl = one_soliton_closed(&spec, x, t).unwrap();
            let k = assemble_kernels(&sol);
            for j in 0..2 {
                assert!((sol.l[(j, 0)] - cl.l[j]).norm() < 1e-12);
                // K_j1(x, z) = L^_j e^{i mu^ z}
                let lh = k.entries[j + 1][0].eval(0.0);
                assert!((lh - cl.lhat[j]).norm() < 1e-12);
            }
            let minv = sol.mbig.clone().try_inverse().unwrap();
            assert!(frob(&(minv - &cl.m_inv)) < 1e-12);
            assert!(frob(&(&cl.pbig * &cl.pbig - &cl.pbig * (cl.c * cl.h))) < 1e-12);
            let (r1, r2) = linear_residuals(&sol);
            assert!(r1 < 1e-12 && r2 < 1e-12);
        }
    }

    #[test]
    fn two_term_glm_residual() {
        let bare = BareOperatorSpec::dispersive_for(&make_params(3, -1).unwrap());
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
        let spec = validate_kernel(&spec, &bare).unwrap();
        for (x, z, t) in [(0.1, 0.5, 0.0), (-1.0, 2.0, 0.4), (0.7, 0.8, -0.3)] {
            let sol = solve_glm(&spec, x, t).unwrap();
            let (r1, r2) = linear_residuals(&sol);
            assert!(r1 < 1e-10 && r2 < 1e-10);
            let k = assemble_kernels(&sol);
            assert!(glm_residual(&k, &spec, x, z, t) < 1e-10);
        }
    }

    #[test]
    fn static_kernel_matches_darboux_modulus() {
        let p = p2();
        let bare = BareOperatorSpec::default_for(&p);
        let spec = static_soliton_kernel(&bare, 1.0, &[c(1.0, 0.0)]).unwrap();
        let d = DressedField::new(
            SolitonSpec::new(p, vec![DarbouxPole::vector(I, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap()]).unwrap(),
            DressingMode::Single(0),
        );
        for x in [-5.0, -1.0, 0.0, 0.4, 3.0] {
            let u = reconstruct_fields(&spec, DEFAULT_C, x, 0.0).unwrap();
            let v = d.eval(x, 0.0).unwrap();
            assert!((u[0].norm() - v[0].norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn dispersive_kernel_gives_vnls_solution() {
        let p = p2();
        let bare = BareOperatorSpec::dispersive_for(&p);
        let spec = bright_soliton_kernel(&bare, 1.0, 0.0, &[c(1.0, 0.0)]).unwrap();
        for (x, t) in [(-1.0, 0.0), (0.0, 0.7), (1.5, 0.7)] {
            let u = reconstruct_fields(&spec, DEFAULT_C, x, t).unwrap();
            let want = C64::from_polar(1.0 / f64::cosh(x), t);
            assert!((u[0] - want).norm() < 1e-12, "{u:?} vs {want}");
        }
        let f = GlmField { spec: bright_soliton_kernel(&bare, 0.7, 0.2, &[c(1.0, 0.0)]).unwrap(), c: DEFAULT_C };
        let mut errs = Vec::new();
        for dx in [0.1, 0.05, 0.025] {
            let g = FieldGrid::sample(&f, GridSpec::centred_in_time(-8.0, 8.0, dx, 0.2, dx * dx * 0.5).unwrap()).unwrap();
            errs.push(vnls_residual(&g, -1).unwrap().max());
        }
        assert!((errs[0] / errs[2]).log2() / 2.0 > 3.5, "{errs:?}");
    }

    #[test]
    fn time_evolution_and_trace() {
        let bare = BareOperatorSpec::dispersive_for(&p2());
        let spec = bright_soliton_kernel(&bare, 1.0, 0.1, &[c(1.0, 0.0)]).unwrap();
        let mh = |x: f64, t: f64| m_hat_from_kernel(&spec, x, t);
        let r = kernel_time_residual(&spec, bare.a, &mh, 0.3, 1.1, 0.2, 1e-3, 1e-3).unwrap();
        assert!(r.evolution < 1e-5 && r.trace < 1e-5, "{r:?}");
        let zero = |_x: f64, _t: f64| Ok(CMat::zeros(2, 2));
        let r0 = kernel_time_residual(&spec, bare.a, &zero, 0.3, 1.1, 0.2, 1e-3, 1e-3).unwrap();
        assert!(r0.trace > 0.1);
    }
}
