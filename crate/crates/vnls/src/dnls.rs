//! Discrete vector NLS lattice with an optional point defect.
//!
//! Sites are 0-based and periodic. Each bulk site carries a row vector `x_j` and a column
//! vector `X_j` in C^{N-1}; the defect site carries the gl_N variables (alpha, beta, gamma, Delta)
//! instead of fields.
//!
//! Several printed defect formulas are inconsistent with the monodromy they are derived from.
//! Those routines take a [`Form`]: `AsPrinted` reproduces the formula verbatim, `Corrected`
//! is the version that agrees with the zero-curvature condition and the ln-tau expansion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cond2, frob, lu_solve, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    AsPrinted,
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Defect {
    pub site: usize,
    pub alpha: C64,
    pub beta: CVec,
    pub gamma: CVec,
    pub delta: CMat,
}

impl Defect {
    pub fn zero(site: usize, ncomp: usize) -> Self {
        Self {
            site,
            alpha: C64::new(0.0, 0.0),
            beta: CVec::zeros(ncomp),
            gamma: CVec::zeros(ncomp),
            delta: CMat::zeros(ncomp, ncomp),
        }
    }

    pub fn random<R: Rng>(site: usize, ncomp: usize, amplitude: f64, rng: &mut R) -> Self {
        Self {
            site,
            alpha: rand_c(amplitude, rng),
            beta: CVec::from_fn(ncomp, |_, _| rand_c(amplitude, rng)),
            gamma: CVec::from_fn(ncomp, |_, _| rand_c(amplitude, rng)),
            delta: CMat::from_fn(ncomp, ncomp, |_, _| rand_c(amplitude, rng)),
        }
    }

    /// The full matrix [[alpha, beta], [gamma, Delta]].
    pub fn amat(&self) -> CMat {
        let n = self.beta.len() + 1;
        let mut m = CMat::zeros(n, n);
        m[(0, 0)] = self.alpha;
        for k in 1..n {
            m[(0, k)] = self.beta[k - 1];
            m[(k, 0)] = self.gamma[k - 1];
            for l in 1..n {
                m[(k, l)] = self.delta[(k - 1, l - 1)];
            }
        }
        m
    }

    pub fn from_amat(site: usize, m: &CMat) -> Self {
        let nc = m.nrows() - 1;
        Self {
            site,
            alpha: m[(0, 0)],
            beta: CVec::from_fn(nc, |k, _| m[(0, k + 1)]),
            gamma: CVec::from_fn(nc, |k, _| m[(k + 1, 0)]),
            delta: CMat::from_fn(nc, nc, |k, l| m[(k + 1, l + 1)]),
        }
    }
}

/// Uniform in the square |Re|, |Im| <= amplitude / sqrt 2, so |z| <= amplitude.
fn rand_c<R: Rng>(amplitude: f64, rng: &mut R) -> C64 {
    let s = amplitude / std::f64::consts::SQRT_2;
    C64::new(rng.gen_range(-s..=s), rng.gen_range(-s..=s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub ncomp: usize,
    pub x: Vec<CVec>,
    pub big_x: Vec<CVec>,
    pub defect: Option<Defect>,
}

pub const MIN_SITES: usize = 5;

impl LatticeState {
    pub fn zero(nsites: usize, ncomp: usize) -> Result<Self> {
        let s = Self {
            ncomp,
            x: vec![CVec::zeros(ncomp); nsites],
            big_x: vec![CVec::zeros(ncomp); nsites],
            defect: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn random<R: Rng>(nsites: usize, ncomp: usize, amplitude: f64, rng: &mut R) -> Result<Self> {
        let mut s = Self::zero(nsites, ncomp)?;
        for j in 0..nsites {
            s.x[j] = CVec::from_fn(ncomp, |_, _| rand_c(amplitude, rng));
            s.big_x[j] = CVec::from_fn(ncomp, |_, _| rand_c(amplitude, rng));
        }
        Ok(s)
    }

    /// Installs a defect; the fields on its site are zeroed.
    pub fn with_defect(mut self, d: Defect) -> Result<Self> {
        let site = d.site;
        self.defect = Some(d);
        self.validate()?;
        self.x[site].fill(C64::new(0.0, 0.0));
        self.big_x[site].fill(C64::new(0.0, 0.0));
        Ok(self)
    }

    pub fn nsites(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.nsites();
        if ns < MIN_SITES {
            return Err(Error::InvalidParams(format!("need at least {MIN_SITES} sites, got {ns}")));
        }
        if self.ncomp == 0 {
            return Err(Error::InvalidParams("need at least one component".into()));
        }
        if self.big_x.len() != ns || self.x.iter().chain(&self.big_x).any(|v| v.len() != self.ncomp) {
            return Err(Error::InvalidParams("field shapes disagree".into()));
        }
        if let Some(d) = &self.defect {
            if d.site == 0 || d.site + 1 >= ns {
                return Err(Error::InvalidParams(format!("defect site {} must not be the first or last site", d.site)));
            }
            let nc = self.ncomp;
            if d.beta.len() != nc || d.gamma.len() != nc || d.delta.shape() != (nc, nc) {
                return Err(Error::InvalidParams("defect variable shapes disagree".into()));
            }
        }
        Ok(())
    }

    fn wrap(&self, k: isize) -> usize {
        k.rem_euclid(self.nsites() as isize) as usize
    }

    /// N_j = 1 + <x_j|X_j>, always recomputed.
    pub fn n_at(&self, j: isize) -> C64 {
        let j = self.wrap(j);
        C64::new(1.0, 0.0) + self.x[j].dot(&self.big_x[j])
    }

    fn xs(&self, j: isize) -> &CVec {
        &self.x[self.wrap(j)]
    }

    fn xb(&self, j: isize) -> &CVec {
        &self.big_x[self.wrap(j)]
    }

    fn defect_ref(&self) -> Result<&Defect> {
        self.defect.as_ref().ok_or(Error::NoDefect)
    }

    fn is_active(&self, j: usize) -> bool {
        self.defect.as_ref().map_or(true, |d| d.site != j)
    }

    /// Dynamical coordinates: (x_j, X_j) for each active site, then the defect matrix row-major.
    pub fn coords(&self) -> Vec<C64> {
        let mut v = Vec::new();
        for j in 0..self.nsites() {
            if self.is_active(j) {
                v.extend(self.x[j].iter());
                v.extend(self.big_x[j].iter());
            }
        }
        if let Some(d) = &self.defect {
            v.extend(d.amat().transpose().iter());
        }
        v
    }

    pub fn with_coords(&self, v: &[C64]) -> Self {
        let mut s = self.clone();
        let nc = self.ncomp;
        let mut k = 0;
        for j in 0..self.nsites() {
            if self.is_active(j) {
                s.x[j] = CVec::from_column_slice(&v[k..k + nc]);
                s.big_x[j] = CVec::from_column_slice(&v[k + nc..k + 2 * nc]);
                k += 2 * nc;
            }
        }
        if let Some(d) = &self.defect {
            let n = nc + 1;
            let m = CMat::from_row_slice(n, n, &v[k..k + n * n]);
            s.defect = Some(Defect::from_amat(d.site, &m));
        }
        s
    }

    /// Index ranges of the field coordinates of active sites, as (x start, X start) pairs.
    fn field_slots(&self) -> Vec<(usize, usize)> {
        let nc = self.ncomp;
        (0..self.nsites())
            .filter(|&j| self.is_active(j))
            .enumerate()
            .map(|(k, _)| (2 * nc * k, 2 * nc * k + nc))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.coords().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Position of site j relative to the defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteClass {
    Bulk,
    Minus2,
    Minus1,
    Defect,
    Plus1,
    Plus2,
}

pub fn site_class(s: &LatticeState, j: usize) -> SiteClass {
    let Some(d) = &s.defect else { return SiteClass::Bulk };
    let ns = s.nsites();
    let o = (j + ns - d.site) % ns;
    match o {
        0 => SiteClass::Defect,
        1 => SiteClass::Plus1,
        2 => SiteClass::Plus2,
        _ if o == ns - 1 => SiteClass::Minus1,
        _ if o == ns - 2 => SiteClass::Minus2,
        _ => SiteClass::Bulk,
    }
}

fn check_index(s: &LatticeState, j: usize) -> Result<()> {
    if j >= s.nsites() {
        return Err(Error::IndexOutOfRange { index: j, len: s.nsites() });
    }
    Ok(())
}

fn block(corner: C64, top: &CVec, left: &CVec, lower: &CMat) -> CMat {
    let n = top.len() + 1;
    let mut m = CMat::zeros(n, n);
    m[(0, 0)] = corner;
    for k in 1..n {
        m[(0, k)] = top[k - 1];
        m[(k, 0)] = left[k - 1];
        for l in 1..n {
            m[(k, l)] = lower[(k - 1, l - 1)];
        }
    }
    m
}

fn outer(col: &CVec, row: &CVec) -> CMat {
    col * row.transpose()
}

/// L_j(lambda) = lambda e_11 + [[N_j, x_j], [X_j, 1]].
pub fn site_lax(s: &LatticeState, j: usize, lambda: C64) -> Result<CMat> {
    check_index(s, j)?;
    if !s.is_active(j) {
        return Err(Error::InvalidParams(format!("site {j} carries the defect")));
    }
    let nc = s.ncomp;
    let mut m = block(s.n_at(j as isize), &s.x[j], &s.big_x[j], &CMat::identity(nc, nc));
    m[(0, 0)] += lambda;
    Ok(m)
}

/// lambda 1 + [[alpha, beta], [gamma, Delta]].
pub fn defect_lax(s: &LatticeState, lambda: C64) -> Result<CMat> {
    let d = s.defect_ref()?;
    let n = s.ncomp + 1;
    Ok(d.amat() + CMat::identity(n, n) * lambda)
}

/// The Lax matrix that sits at site j (defect factor on the defect site).
pub fn lax_at(s: &LatticeState, j: usize, lambda: C64) -> Result<CMat> {
    check_index(s, j)?;
    if s.is_active(j) {
        site_lax(s, j, lambda)
    } else {
        defect_lax(s, lambda)
    }
}

/// T(lambda) = L_{N-1} ... L_1 L_0.
pub fn monodromy(s: &LatticeState, lambda: C64) -> Result<CMat> {
    s.validate()?;
    let n = s.ncomp + 1;
    let mut t = CMat::identity(n, n);
    for j in 0..s.nsites() {
        t = lax_at(s, j, lambda)? * t;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeTriple {
    pub i1: C64,
    pub i2: C64,
    pub i3: C64,
}

impl ChargeTriple {
    pub fn as_array(&self) -> [C64; 3] {
        [self.i1, self.i2, self.i3]
    }

    pub fn max_diff(&self, o: &ChargeTriple) -> f64 {
        self.as_array().iter().zip(o.as_array()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

pub fn charges_bulk(s: &LatticeState) -> Result<ChargeTriple> {
    s.validate()?;
    if s.defect.is_some() {
        return Err(Error::DefectPresent);
    }
    let ns = s.nsites() as isize;
    let (mut i1, mut i2, mut i3) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for i in 0..ns {
        let n = s.n_at(i);
        let h1 = s.xs(i).dot(s.xb(i - 1));
        i1 += n;
        i2 += -0.5 * n * n + h1;
        i3 += n * n * n / 3.0 + s.xs(i).dot(s.xb(i - 2)) - (s.n_at(i - 1) + n) * h1;
    }
    Ok(ChargeTriple { i1, i2, i3 })
}

/// Charges with the defect. `AsPrinted` uses the third charge exactly as printed; `Corrected`
/// flips the signs of the N_{n+1} and N_{n-1} couplings and the alpha term, which makes it
/// equal to the ln-tau coefficient and conserved by the corrected flow.
pub fn charges_defect(s: &LatticeState, form: Form) -> Result<ChargeTriple> {
    s.validate()?;
    let d = s.defect_ref()?;
    let ns = s.nsites() as isize;
    let n = d.site as isize;
    let w = |k: isize| k.rem_euclid(ns);
    let (al, be, ga, de) = (d.alpha, &d.beta, &d.gamma, &d.delta);
    let (x1, x2, xm1, xm2) = (s.xs(n + 1), s.xs(n + 2), s.xb(n - 1), s.xb(n - 2));
    let (nm, np) = (s.n_at(n - 1), s.n_at(n + 1));
    let xt = x1 + be;
    let xbt = xm1 + ga;
    let mut i1 = al;
    let mut i2 = -0.5 * al * al + x1.dot(xm1) + be.dot(xm1) + x1.dot(ga);
    let mut i3 = al * al * al / 3.0;
    for i in 0..ns {
        if i == n {
            continue;
        }
        let ni = s.n_at(i);
        i1 += ni;
        i2 += -0.5 * ni * ni;
        i3 += ni * ni * ni / 3.0;
        if i != w(n - 1) {
            let h = s.xs(i + 1).dot(s.xb(i));
            i2 += h;
            i3 -= (ni + s.n_at(i + 1)) * h;
        }
        if i != w(n - 1) && i != w(n + 1) {
            i3 += s.xs(i + 1).dot(s.xb(i - 1));
        }
    }
    let x1_de_xm1 = (de.transpose() * x1).dot(xm1);
    i3 += x1_de_xm1 + x2.dot(&xbt) + xt.dot(xm2) - al * x1.dot(ga);
    i3 += match form {
        Form::AsPrinted => np * x1.dot(&xbt) + (nm - al) * xt.dot(xm1),
        Form::Corrected => -np * x1.dot(&xbt) - (nm + al) * xt.dot(xm1),
    };
    Ok(ChargeTriple { i1, i2, i3 })
}

/// Bulk charges without a defect, corrected defect charges with one.
pub fn charges(s: &LatticeState) -> Result<ChargeTriple> {
    if s.defect.is_some() {
        charges_defect(s, Form::Corrected)
    } else {
        charges_bulk(s)
    }
}

/// Time derivative of every dynamical variable, returned as a state of the same shape
/// (the defect site's fields stay zero).
///
/// `AsPrinted` follows the printed bulk, defect-neighbourhood and defect-variable equations.
/// `Corrected` adds the term -alpha x_{n+1} to the x_{n-1} equation, the one change needed for
/// the zero-curvature condition at site n-1.
pub fn eom_rhs(s: &LatticeState, form: Form) -> Result<LatticeState> {
    s.validate()?;
    let ns = s.nsites() as isize;
    let mut out = LatticeState {
        ncomp: s.ncomp,
        x: vec![CVec::zeros(s.ncomp); s.nsites()],
        big_x: vec![CVec::zeros(s.ncomp); s.nsites()],
        defect: s.defect.as_ref().map(|d| Defect::zero(d.site, s.ncomp)),
    };
    let x = |k: isize| s.xs(k);
    let xb = |k: isize| s.xb(k);
    let nn = |k: isize| s.n_at(k);
    for j in 0..ns {
        let cls = site_class(s, j as usize);
        if cls == SiteClass::Defect {
            continue;
        }
        let (dx, dxb) = match (cls, &s.defect) {
            (SiteClass::Minus2, Some(d)) => {
                let nj = nn(j);
                let dx = x(j) * (nj * nj) - x(j) * x(j + 1).dot(xb(j)) - x(j) * x(j).dot(xb(j - 1))
                    - x(j + 1) * (nn(j + 1) + nj)
                    + &d.beta
                    + x(j + 3);
                let dxb = bulk_xb(s, j);
                (dx, dxb)
            }
            (SiteClass::Minus1, Some(d)) => {
                let nj = nn(j);
                let (x1, x2) = (x(j + 2), x(j + 3));
                let np = nn(j + 2);
                let bx = d.beta.dot(xb(j));
                let mut dx = x(j) * (nj * nj) - x(j) * x1.dot(xb(j)) - x(j) * x(j).dot(xb(j - 1)) - x(j) * bx
                    - &d.beta * d.alpha
                    - &d.beta * nj
                    - x1 * (nj + np)
                    + d.delta.transpose() * x1
                    + x2;
                if form == Form::Corrected {
                    dx -= x1 * d.alpha;
                }
                let dxb = -xb(j) * (nj * nj) + xb(j) * x1.dot(xb(j)) + xb(j) * x(j).dot(xb(j - 1)) + xb(j) * bx
                    + xb(j - 1) * (nj + nn(j - 1))
                    - xb(j - 2);
                (dx, dxb)
            }
            (SiteClass::Plus1, Some(d)) => {
                let nj = nn(j);
                let (xm1, xm2) = (xb(j - 2), xb(j - 3));
                let nm = nn(j - 2);
                let xg = x(j).dot(&d.gamma);
                let dx = x(j) * (nj * nj) - x(j) * x(j).dot(xm1) - x(j) * x(j + 1).dot(xb(j)) - x(j) * xg
                    - x(j + 1) * (nj + nn(j + 1))
                    + x(j + 2);
                let dxb = -xb(j) * (nj * nj) + xb(j) * x(j).dot(xm1) + xb(j) * x(j + 1).dot(xb(j)) + xb(j) * xg
                    + &d.gamma * nj
                    + &d.gamma * d.alpha
                    + xm1 * d.alpha
                    - &d.delta * xm1
                    + xm1 * (nm + nj)
                    - xm2;
                (dx, dxb)
            }
            (SiteClass::Plus2, Some(d)) => {
                let nj = nn(j);
                let dx = bulk_x(s, j);
                let dxb = -xb(j) * (nj * nj) + xb(j) * x(j).dot(xb(j - 1)) + xb(j) * x(j + 1).dot(xb(j))
                    + xb(j - 1) * (nn(j - 1) + nj)
                    - &d.gamma
                    - xb(j - 3);
                (dx, dxb)
            }
            _ => (bulk_x(s, j), bulk_xb(s, j)),
        };
        out.x[j as usize] = dx;
        out.big_x[j as usize] = dxb;
    }
    if let Some(d) = &s.defect {
        let n = d.site as isize;
        let (al, be, ga, de) = (d.alpha, &d.beta, &d.gamma, &d.delta);
        let (x1, x2, xm1, xm2) = (x(n + 1), x(n + 2), xb(n - 1), xb(n - 2));
        let (nm, np) = (nn(n - 1), nn(n + 1));
        let bxm1 = be.dot(xm1);
        let x1g = x1.dot(ga);
        let x1xm1 = x1.dot(xm1);
        let dal = (al + nm) * bxm1 - (al + np) * x1g + x2.dot(ga) - be.dot(xm2);
        let dbe = -be * x1xm1 - be * x1g - be * bxm1 + be * (al * al) + x1 * (al * (al + np))
            - de.transpose() * x1 * (al + np)
            - x1 * bxm1
            - x2 * al
            + de.transpose() * x2;
        let dga = -ga * (al * al) + ga * x1g + ga * x1xm1 + ga * bxm1 - xm1 * (al * al) - xm1 * (al * nm)
            + de * xm1 * (al + nm)
            + xm1 * x1g
            + xm2 * al
            - de * xm2;
        let p = outer(xm1, x1);
        let dde = -outer(xm1, be) * (al + nm) + outer(ga, x1) * (al + np) + outer(xm2, be) - outer(ga, x2) + &p * de
            - de * &p;
        out.defect = Some(Defect { site: d.site, alpha: dal, beta: dbe, gamma: dga, delta: dde });
    }
    Ok(out)
}

fn bulk_x(s: &LatticeState, j: isize) -> CVec {
    let nj = s.n_at(j);
    s.xs(j) * (nj * nj) - s.xs(j) * s.xs(j + 1).dot(s.xb(j)) - s.xs(j) * s.xs(j).dot(s.xb(j - 1))
        - s.xs(j + 1) * (nj + s.n_at(j + 1))
        + s.xs(j + 2)
}

fn bulk_xb(s: &LatticeState, j: isize) -> CVec {
    let nj = s.n_at(j);
    -s.xb(j) * (nj * nj) + s.xb(j) * s.xs(j + 1).dot(s.xb(j)) + s.xb(j) * s.xs(j).dot(s.xb(j - 1))
        + s.xb(j - 1) * (s.n_at(j - 1) + nj)
        - s.xb(j - 2)
}

fn rk4_raw(s: &LatticeState, dt: f64, form: Form) -> Result<LatticeState> {
    let y0 = s.coords();
    let f = |v: &[C64]| -> Result<Vec<C64>> { Ok(eom_rhs(&s.with_coords(v), form)?.coords()) };
    let axpy = |a: &[C64], h: f64, b: &[C64]| -> Vec<C64> { a.iter().zip(b).map(|(p, q)| p + q * h).collect() };
    let k1 = f(&y0)?;
    let k2 = f(&axpy(&y0, dt / 2.0, &k1))?;
    let k3 = f(&axpy(&y0, dt / 2.0, &k2))?;
    let k4 = f(&axpy(&y0, dt, &k3))?;
    let y1: Vec<C64> = (0..y0.len()).map(|i| y0[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0)).collect();
    if y1.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("lattice state after RK4 step".into()));
    }
    Ok(s.with_coords(&y1))
}

/// One classical RK4 step over fields and defect variables together.
pub fn rk4_step(s: &LatticeState, dt: f64, form: Form) -> Result<LatticeState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParams("dt must be positive".into()));
    }
    rk4_raw(s, dt, form)
}

/// Largest relative change of each charge over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub rel_drift: [f64; 3],
    pub initial: ChargeTriple,
    pub steps_done: usize,
    pub t_reached: f64,
    /// Time at which the state became non-finite or exceeded the amplitude limit.
    pub blowup_time: Option<f64>,
    pub max_amplitude: f64,
}

/// States whose largest coordinate exceeds this are treated as blown up.
pub const BLOWUP_AMPLITUDE: f64 = 1e6;

/// Integrates to `t_end` and tracks the charges after every step. A blow-up ends the run
/// early with infinite drift.
pub fn conservation_run(s: &LatticeState, dt: f64, t_end: f64, form: Form) -> Result<DriftReport> {
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParams("t_end must be non-negative".into()));
    }
    let q0 = charges_for(s, form)?;
    let steps = (t_end / dt).round() as usize;
    let mut st = s.clone();
    let mut drift = [0.0f64; 3];
    let mut max_amp = st.max_abs();
    for k in 0..steps {
        let next = rk4_step(&st, dt, form);
        let blew = match &next {
            Ok(n) => !(n.max_abs() <= BLOWUP_AMPLITUDE),
            Err(Error::NonFinite(_)) => true,
            Err(e) => return Err(e.clone()),
        };
        if blew {
            return Ok(DriftReport {
                rel_drift: [f64::INFINITY; 3],
                initial: q0,
                steps_done: k,
                t_reached: k as f64 * dt,
                blowup_time: Some((k + 1) as f64 * dt),
                max_amplitude: f64::INFINITY,
            });
        }
        st = next?;
        max_amp = max_amp.max(st.max_abs());
        let q = charges_for(&st, form)?;
        for (m, (a, b)) in q.as_array().iter().zip(q0.as_array()).enumerate() {
            drift[m] = drift[m].max((a - b).norm() / b.norm().max(f64::MIN_POSITIVE));
        }
    }
    Ok(DriftReport { rel_drift: drift, initial: q0, steps_done: steps, t_reached: steps as f64 * dt, blowup_time: None, max_amplitude: max_amp })
}

fn charges_for(s: &LatticeState, form: Form) -> Result<ChargeTriple> {
    if s.defect.is_some() {
        charges_defect(s, form)
    } else {
        charges_bulk(s)
    }
}

/// A^{(order)}_j(mu) for order 1, 2, 3, with the defect-neighbourhood variants.
pub fn a_matrix(s: &LatticeState, j: usize, mu: C64, order: u8) -> Result<CMat> {
    check_index(s, j)?;
    s.validate()?;
    let nc = s.ncomp;
    let zero_v = CVec::zeros(nc);
    let zero_m = CMat::zeros(nc, nc);
    let jj = j as isize;
    let cls = site_class(s, j);
    match order {
        1 => Ok(block(C64::new(1.0, 0.0), &zero_v, &zero_v, &zero_m)),
        2 => {
            let (top, left) = match (cls, &s.defect) {
                (SiteClass::Defect, Some(d)) => (s.xs(jj + 1) + &d.beta, s.xb(jj - 1).clone()),
                (SiteClass::Plus1, Some(d)) => (s.xs(jj).clone(), s.xb(jj - 2) + &d.gamma),
                _ => (s.xs(jj).clone(), s.xb(jj - 1).clone()),
            };
            Ok(block(mu, &top, &left, &zero_m))
        }
        3 => Ok(a3_matrix(s, j, mu)?),
        _ => Err(Error::InvalidParams(format!("A matrix order {order} not available"))),
    }
}

pub fn a3_matrix(s: &LatticeState, j: usize, mu: C64) -> Result<CMat> {
    check_index(s, j)?;
    s.validate()?;
    let jj = j as isize;
    let x = |k: isize| s.xs(k);
    let xb = |k: isize| s.xb(k);
    let nn = |k: isize| s.n_at(k);
    let mu2 = mu * mu;
    Ok(match (site_class(s, j), &s.defect) {
        (SiteClass::Minus1, Some(d)) => {
            let xt = x(jj + 2) + &d.beta;
            block(mu2 - x(jj).dot(xb(jj - 1)), &(x(jj) * (mu - nn(jj)) + xt), &(xb(jj - 1) * (mu - nn(jj - 1)) + xb(jj - 2)), &outer(xb(jj - 1), x(jj)))
        }
        (SiteClass::Defect, Some(d)) => {
            let (x1, xm1) = (x(jj + 1), xb(jj - 1));
            let xt = x1 + &d.beta;
            let xh = d.delta.transpose() * x1 - x1 * nn(jj + 1) - &xt * d.alpha;
            block(mu2 - xt.dot(xm1), &(&xt * mu + xh + x(jj + 2)), &(xm1 * (mu - nn(jj - 1)) + xb(jj - 2)), &outer(xm1, &xt))
        }
        (SiteClass::Plus1, Some(d)) => {
            let xm1 = xb(jj - 2);
            let xbt = xm1 + &d.gamma;
            let xbh = &d.delta * xm1 - xm1 * nn(jj - 2) - &xbt * d.alpha;
            block(mu2 - x(jj).dot(&xbt), &(x(jj) * (mu - nn(jj)) + x(jj + 1)), &(&xbt * mu + xbh + xb(jj - 3)), &outer(&xbt, x(jj)))
        }
        (SiteClass::Plus2, Some(d)) => {
            let xbt = xb(jj - 3) + &d.gamma;
            block(mu2 - x(jj).dot(xb(jj - 1)), &(x(jj) * (mu - nn(jj)) + x(jj + 1)), &(xb(jj - 1) * (mu - nn(jj - 1)) + xbt), &outer(xb(jj - 1), x(jj)))
        }
        _ => block(
            mu2 - x(jj).dot(xb(jj - 1)),
            &(x(jj) * (mu - nn(jj)) + x(jj + 1)),
            &(xb(jj - 1) * (mu - nn(jj - 1)) + xb(jj - 2)),
            &outer(xb(jj - 1), x(jj)),
        ),
    })
}

fn zcc_rhs(s: &LatticeState, j: usize, lambda: C64, mu: C64) -> Result<CMat> {
    let l = lax_at(s, j, lambda)?;
    let next = (j + 1) % s.nsites();
    Ok(a3_matrix(s, next, mu)? * &l - &l * a3_matrix(s, j, mu)?)
}

/// ||(L_j(Phi_h) - L_j(Phi_-h)) / 2h - (A_{j+1} L_j - L_j A_j)||_F where Phi_{+-h} are single RK4
/// steps of the chosen flow. The residual is O(h^2) when the flow satisfies the zero-curvature
/// condition at site j and has a floor otherwise. The condition is only lambda-independent
/// for lambda = mu.
pub fn zcc_discrete(s: &LatticeState, j: usize, lambda: C64, mu: C64, h: f64, form: Form) -> Result<f64> {
    check_index(s, j)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParams("h must be positive".into()));
    }
    let fwd = rk4_raw(s, h, form)?;
    let bwd = rk4_raw(s, -h, form)?;
    let dl = (lax_at(&fwd, j, lambda)? - lax_at(&bwd, j, lambda)?) / C64::new(2.0 * h, 0.0);
    Ok(frob(&(dl - zcc_rhs(s, j, lambda, mu)?)))
}

/// The same mismatch with dL_j/dt computed exactly from the equations of motion.
pub fn zcc_algebraic(s: &LatticeState, j: usize, lambda: C64, mu: C64, form: Form) -> Result<f64> {
    check_index(s, j)?;
    let d = eom_rhs(s, form)?;
    let dl = if s.is_active(j) {
        let dn = s.x[j].dot(&d.big_x[j]) + d.x[j].dot(&s.big_x[j]);
        block(dn, &d.x[j], &d.big_x[j], &CMat::zeros(s.ncomp, s.ncomp))
    } else {
        d.defect.as_ref().ok_or(Error::NoDefect)?.amat()
    };
    Ok(frob(&(dl - zcc_rhs(s, j, lambda, mu)?)))
}

/// tau(lambda) / lambda^N = tr prod_j (D_j + A_j / lambda), with D_j = e_11 on bulk sites and 1 on
/// the defect site.
pub fn normalized_transfer(s: &LatticeState, lambda: C64) -> Result<C64> {
    s.validate()?;
    let n = s.ncomp + 1;
    let inv = C64::new(1.0, 0.0) / lambda;
    let mut t = CMat::identity(n, n);
    for j in 0..s.nsites() {
        let m = if s.is_active(j) {
            let mut m = block(s.n_at(j as isize), &s.x[j], &s.big_x[j], &CMat::identity(s.ncomp, s.ncomp)) * inv;
            m[(0, 0)] += 1.0;
            m
        } else {
            defect_lax(s, C64::new(0.0, 0.0))? * inv + CMat::identity(n, n)
        };
        t = m * t;
    }
    Ok(t.trace())
}

/// Default ln-tau samples: 16 points on the circle |lambda| = 20.
pub fn default_lambda_samples() -> Vec<C64> {
    (0..16).map(|k| C64::from_polar(20.0, 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 16.0)).collect()
}

pub const FIT_COND_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct LnTauFit {
    pub charges: ChargeTriple,
    /// Fitted constant term; zero in exact arithmetic.
    pub constant: C64,
    pub cond: f64,
    pub degree: usize,
}

/// Least-squares fit of ln(tau(lambda) / lambda^N) to a polynomial in 1/lambda.
pub fn lntau_check(s: &LatticeState, samples: &[C64]) -> Result<LnTauFit> {
    let m = samples.len();
    if m < 6 {
        return Err(Error::InvalidParams(format!("need at least 6 lambda samples, got {m}")));
    }
    let scale = samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if samples.iter().any(|z| !(z.norm() > 0.0)) {
        return Err(Error::InvalidParams("lambda samples must be nonzero".into()));
    }
    let ncols = m.min(16);
    let v = CMat::from_fn(m, ncols, |r, k| (C64::new(scale, 0.0) / samples[r]).powu(k as u32));
    let cond = cond2(&v);
    if !(cond <= FIT_COND_LIMIT) {
        return Err(Error::IllConditionedFit { cond });
    }
    let mut rhs = CMat::zeros(m, 1);
    let mut prev: Option<f64> = None;
    for (r, &lam) in samples.iter().enumerate() {
        let z = normalized_transfer(s, lam)?;
        if !(z.norm() > 0.0) || !z.is_finite() {
            return Err(Error::NonFinite(format!("transfer matrix trace at lambda = {lam}")));
        }
        // follow the phase from sample to sample
        let mut arg = z.arg();
        if let Some(p) = prev {
            arg += 2.0 * std::f64::consts::PI * ((p - arg) / (2.0 * std::f64::consts::PI)).round();
        }
        prev = Some(arg);
        rhs[(r, 0)] = C64::new(z.norm().ln(), arg);
    }
    let vh = v.adjoint();
    let coef = lu_solve(&(&vh * &v), &(&vh * rhs)).ok_or(Error::IllConditionedFit { cond })?;
    let at = |k: usize| if k < ncols { coef[(k, 0)] * scale.powi(k as i32) } else { C64::new(0.0, 0.0) };
    Ok(LnTauFit { charges: ChargeTriple { i1: at(1), i2: at(2), i3: at(3) }, constant: coef[(0, 0)], cond, degree: ncols - 1 })
}

/// Complex gradient of a functional with respect to the coordinates, by central differences.
fn gradient(f: &dyn Fn(&LatticeState) -> Result<C64>, s: &LatticeState, h: f64) -> Result<Vec<C64>> {
    let v0 = s.coords();
    let mut g = Vec::with_capacity(v0.len());
    let mut v = v0.clone();
    for k in 0..v0.len() {
        v[k] = v0[k] + h;
        let fp = f(&s.with_coords(&v))?;
        v[k] = v0[k] - h;
        let fm = f(&s.with_coords(&v))?;
        v[k] = v0[k];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("finite-difference derivative along coordinate {k}")));
        }
        g.push(d);
    }
    Ok(g)
}

/// Structure constants of the defect bracket {a_ij, a_kl}.
fn defect_bracket(a: &CMat, i: usize, j: usize, k: usize, l: usize, form: Form) -> C64 {
    let z = C64::new(0.0, 0.0);
    match form {
        // alpha^{(il)} delta_kj - alpha^{(lj)} delta_ik
        Form::AsPrinted => (if k == j { a[(i, l)] } else { z }) - (if i == k { a[(l, j)] } else { z }),
        // a_il delta_kj - a_kj delta_il, the gl_N Lie-Poisson bracket
        Form::Corrected => (if k == j { a[(i, l)] } else { z }) - (if i == l { a[(k, j)] } else { z }),
    }
}

/// {f, g} = -sum (df/dx dg/dX - df/dX dg/dx) plus the linear bracket on the defect variables.
pub fn poisson_bracket(
    f: &dyn Fn(&LatticeState) -> Result<C64>,
    g: &dyn Fn(&LatticeState) -> Result<C64>,
    s: &LatticeState,
    h: f64,
    form: Form,
) -> Result<C64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParams("h must be positive".into()));
    }
    let gf = gradient(f, s, h)?;
    let gg = gradient(g, s, h)?;
    let nc = s.ncomp;
    let mut acc = C64::new(0.0, 0.0);
    let slots = s.field_slots();
    for &(px, pb) in &slots {
        for k in 0..nc {
            acc -= gf[px + k] * gg[pb + k] - gf[pb + k] * gg[px + k];
        }
    }
    if let Some(d) = &s.defect {
        let a = d.amat();
        let n = nc + 1;
        let off = 2 * nc * slots.len();
        for i in 0..n {
            for j in 0..n {
                let fa = gf[off + i * n + j];
                for k in 0..n {
                    for l in 0..n {
                        acc += fa * gg[off + k * n + l] * defect_bracket(&a, i, j, k, l, form);
                    }
                }
            }
        }
    }
    Ok(acc)
}
