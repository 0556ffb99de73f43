//! Bäcklund-transformation residuals between two sampled fields and the
//! soliton / anti-soliton conjugation symmetry.

use crate::error::{Error, Result};
use crate::field::{stencil, FieldGrid};
use crate::lax_core::{build_u, LaxParams, ResidualField};
use crate::linalg::{frob, vec_norm, C64, I};

/// |u_tilde - u| below this is a degenerate point.
pub const DEGENERATE_EPS: f64 = 1e-14;

/// How eta is chosen among the two square roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaMode {
    /// Principal square root at every point.
    Principal,
    /// Principal root at the first valid point of each time row, then continued
    /// along x by picking the root closest to the linear extrapolation.
    Continued,
}

/// Two fields on congruent grids, the pole mu and the branch sign.
#[derive(Debug, Clone)]
pub struct BtPair {
    pub u: FieldGrid,
    pub u_tilde: FieldGrid,
    pub mu: C64,
    pub kappa: i32,
    pub branch: i32,
    pub eta_mode: EtaMode,
}

impl BtPair {
    pub fn new(u: FieldGrid, u_tilde: FieldGrid, mu: C64, kappa: i32, branch: i32) -> Result<Self> {
        if !u.congruent(&u_tilde) {
            return Err(Error::GridMismatch);
        }
        if mu.im == 0.0 {
            return Err(Error::InvalidParams("mu must have nonzero imaginary part".into()));
        }
        if kappa != 1 && kappa != -1 {
            return Err(Error::InvalidParams("kappa must be +1 or -1".into()));
        }
        if branch != 1 && branch != -1 {
            return Err(Error::InvalidParams("branch must be +1 or -1".into()));
        }
        Ok(Self { u, u_tilde, mu, kappa, branch, eta_mode: EtaMode::Continued })
    }

    pub fn with_branch(&self, branch: i32) -> Self {
        let mut p = self.clone();
        p.branch = branch;
        p
    }

    pub fn with_eta_mode(&self, mode: EtaMode) -> Self {
        let mut p = self.clone();
        p.eta_mode = mode;
        p
    }

    fn half_gap(&self) -> C64 {
        (self.mu.conj() - self.mu) * 0.5
    }

    fn diff_sq(&self, it: usize, ix: usize) -> f64 {
        let a = self.u_tilde.at(it, ix);
        let b = self.u.at(it, ix);
        a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum()
    }

    fn principal_eta(&self, m: f64) -> C64 {
        let w = self.half_gap();
        principal_sqrt(w * w - self.kappa as f64 * m)
    }
}

/// Square root with arg in (-pi/2, pi/2]; a negative zero imaginary part is read as +0
/// so that negative reals map to +i sqrt(|z|).
pub fn principal_sqrt(z: C64) -> C64 {
    C64::new(z.re, z.im + 0.0).sqrt()
}

/// d and eta at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtCoefficients {
    pub d: C64,
    pub eta: C64,
}

/// Quadratic residual kappa d^2 - (mu* - mu) d + |u_tilde - u|^2.
pub fn quadratic_residual(mu: C64, kappa: i32, d: C64, diff_sq: f64) -> C64 {
    kappa as f64 * d * d - (mu.conj() - mu) * d + diff_sq
}

/// Coefficients at grid point (it, ix) with the principal eta.
pub fn bt_coefficients(pair: &BtPair, it: usize, ix: usize) -> Result<BtCoefficients> {
    let m = pair.diff_sq(it, ix);
    if m.sqrt() < DEGENERATE_EPS {
        return Err(Error::DegeneratePoint { x: pair.u.x(ix), t: pair.u.t(it) });
    }
    Ok(coefficients_from(pair.mu, pair.kappa, pair.branch, pair.principal_eta(m)))
}

fn coefficients_from(mu: C64, kappa: i32, branch: i32, eta: C64) -> BtCoefficients {
    let w = (mu.conj() - mu) * 0.5;
    BtCoefficients { d: w / kappa as f64 + eta * branch as f64, eta }
}

/// Eta along every time row, NaN at degenerate points.
#[derive(Debug, Clone)]
pub struct EtaField {
    pub values: Vec<C64>,
    /// Grid points where the continued root stops matching the principal root's sign.
    pub cut_crossings: Vec<(usize, usize)>,
    /// Grid points where the principal root jumps by more than |eta| / 2 between neighbours.
    pub principal_jumps: Vec<(usize, usize)>,
}

fn nan_c() -> C64 {
    C64::new(f64::NAN, f64::NAN)
}

/// Evaluates eta on the whole grid according to `pair.eta_mode`, plus continuity diagnostics.
pub fn eta_field(pair: &BtPair) -> EtaField {
    let (nt, nx) = (pair.u.nt, pair.u.nx);
    let mut values = vec![nan_c(); nt * nx];
    let mut cut_crossings = Vec::new();
    let mut principal_jumps = Vec::new();
    for it in 0..nt {
        let mut prev: Vec<C64> = Vec::new();
        let mut prev_principal: Option<C64> = None;
        let mut matches_principal = true;
        for ix in 0..nx {
            let m = pair.diff_sq(it, ix);
            if m.sqrt() < DEGENERATE_EPS {
                prev.clear();
                prev_principal = None;
                continue;
            }
            let p = pair.principal_eta(m);
            if let Some(pp) = prev_principal {
                if (p - pp).norm() > 0.5 * p.norm().max(pp.norm()) {
                    principal_jumps.push((it, ix));
                }
            }
            prev_principal = Some(p);
            let chosen = match (pair.eta_mode, prev.len()) {
                (EtaMode::Principal, _) | (_, 0) => p,
                (EtaMode::Continued, k) => {
                    let guess = if k >= 2 { 2.0 * prev[k - 1] - prev[k - 2] } else { prev[k - 1] };
                    if (p - guess).norm() <= (-p - guess).norm() {
                        p
                    } else {
                        -p
                    }
                }
            };
            let now_matches = (chosen - p).norm() <= (chosen + p).norm();
            if now_matches != matches_principal && !prev.is_empty() {
                cut_crossings.push((it, ix));
            }
            matches_principal = now_matches;
            prev.push(chosen);
            values[it * nx + ix] = chosen;
        }
    }
    EtaField { values, cut_crossings, principal_jumps }
}

/// Residual field with bookkeeping of skipped points.
#[derive(Debug, Clone)]
pub struct BtResidual {
    pub field: ResidualField,
    pub degenerate: usize,
    pub cut_crossings: usize,
}

impl BtResidual {
    pub fn max(&self) -> f64 {
        self.field.max()
    }
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    // <a|b*> = sum a_k conj(b_k)
    a.iter().zip(b).map(|(p, q)| p * q.conj()).sum()
}

fn dx4(g: &FieldGrid, it: usize, ix: usize) -> Vec<C64> {
    (0..g.ncomp)
        .map(|k| stencil::d1_4(g.at(it, ix - 2)[k], g.at(it, ix - 1)[k], g.at(it, ix + 1)[k], g.at(it, ix + 2)[k], g.dx))
        .collect()
}

fn dt2(g: &FieldGrid, it: usize, ix: usize) -> Vec<C64> {
    (0..g.ncomp).map(|k| stencil::d1_2(g.at(it - 1, ix)[k], g.at(it + 1, ix)[k], g.dt)).collect()
}

fn check_pair(pair: &BtPair) -> Result<()> {
    pair.u.validate()?;
    if !pair.u.congruent(&pair.u_tilde) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Pointwise norm of
/// i(u~ - u)_x + mu (u~ - u) - (w + s eta) u + ((|u~|^2 - <u~|u*>) / |u~ - u|^2)(w - s eta)(u~ - u),
/// with w = (mu* - mu)/2 and s the branch sign; interior points (nt - 2) x (nx - 4), NaN where degenerate.
pub fn bt_x_residual(pair: &BtPair) -> Result<BtResidual> {
    check_pair(pair)?;
    let eta = eta_field(pair);
    let (g, gt) = (&pair.u, &pair.u_tilde);
    let w = pair.half_gap();
    let s = pair.branch as f64;
    let rows = g.nt - 2;
    let cols = g.nx - 4;
    let mut values = Vec::with_capacity(rows * cols);
    let mut degenerate = 0;
    for it in 1..g.nt - 1 {
        for ix in 2..g.nx - 2 {
            let e = eta.values[it * g.nx + ix];
            if e.re.is_nan() {
                degenerate += 1;
                values.push(f64::NAN);
                continue;
            }
            let (u, ut) = (g.at(it, ix), gt.at(it, ix));
            let m = pair.diff_sq(it, ix);
            let (ux, utx) = (dx4(g, it, ix), dx4(gt, it, ix));
            let coef = (vec_norm(ut).powi(2) - inner(ut, u)) / m;
            let r: Vec<C64> = (0..g.ncomp)
                .map(|k| {
                    let dk = ut[k] - u[k];
                    I * (utx[k] - ux[k]) + pair.mu * dk - (w + s * e) * u[k] + coef * (w - s * e) * dk
                })
                .collect();
            values.push(vec_norm(&r));
        }
    }
    Ok(BtResidual { field: ResidualField { rows, cols, values }, degenerate, cut_crossings: eta.cut_crossings.len() })
}

/// Pointwise norm of the t-part
/// i(u~ - u)_t + i mu (u~ - u)_x + i((<u~_x|u~*> - <u~_x|u*>) / |u~ - u|^2)(w - s eta)(u~ - u)
///   - kappa |u~|^2 (u~ - u) - kappa(<u~|u*> - |u|^2) u - i(w + s eta) u_x.
pub fn bt_t_residual(pair: &BtPair) -> Result<BtResidual> {
    check_pair(pair)?;
    let eta = eta_field(pair);
    let (g, gt) = (&pair.u, &pair.u_tilde);
    let w = pair.half_gap();
    let s = pair.branch as f64;
    let kap = pair.kappa as f64;
    let rows = g.nt - 2;
    let cols = g.nx - 4;
    let mut values = Vec::with_capacity(rows * cols);
    let mut degenerate = 0;
    for it in 1..g.nt - 1 {
        for ix in 2..g.nx - 2 {
            let e = eta.values[it * g.nx + ix];
            if e.re.is_nan() {
                degenerate += 1;
                values.push(f64::NAN);
                continue;
            }
            let (u, ut) = (g.at(it, ix), gt.at(it, ix));
            let m = pair.diff_sq(it, ix);
            let (ux, utx) = (dx4(g, it, ix), dx4(gt, it, ix));
            let (u_t, ut_t) = (dt2(g, it, ix), dt2(gt, it, ix));
            let coef = (inner(&utx, ut) - inner(&utx, u)) / m;
            let mt = vec_norm(ut).powi(2);
            let cross = inner(ut, u) - vec_norm(u).powi(2);
            let r: Vec<C64> = (0..g.ncomp)
                .map(|k| {
                    let dk = ut[k] - u[k];
                    I * (ut_t[k] - u_t[k]) + I * pair.mu * (utx[k] - ux[k]) + I * coef * (w - s * e) * dk
                        - kap * mt * dk
                        - kap * cross * u[k]
                        - I * (w + s * e) * ux[k]
                })
                .collect();
            values.push(vec_norm(&r));
        }
    }
    Ok(BtResidual { field: ResidualField { rows, cols, values }, degenerate, cut_crossings: eta.cut_crossings.len() })
}

/// Branch choice with the residual maxima of both signs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchReport {
    pub best: i32,
    pub x_max: [f64; 2],
    pub t_max: [f64; 2],
}

impl BranchReport {
    fn idx(b: i32) -> usize {
        if b == 1 {
            0
        } else {
            1
        }
    }
    pub fn x_of(&self, b: i32) -> f64 {
        self.x_max[Self::idx(b)]
    }
    pub fn t_of(&self, b: i32) -> f64 {
        self.t_max[Self::idx(b)]
    }
}

/// Tries both signs and returns the one with the smaller combined residual.
pub fn select_branch(pair: &BtPair) -> Result<BranchReport> {
    let mut x_max = [0.0; 2];
    let mut t_max = [0.0; 2];
    for (k, b) in [1, -1].into_iter().enumerate() {
        let p = pair.with_branch(b);
        x_max[k] = bt_x_residual(&p)?.max();
        t_max[k] = bt_t_residual(&p)?.max();
    }
    let best = if x_max[0] + t_max[0] <= x_max[1] + t_max[1] { 1 } else { -1 };
    Ok(BranchReport { best, x_max, t_max })
}

/// ||q|^2 + |u~ - u|^2 / d^2| with |q> = (u~ - u) / (i sqrt(kappa) d).
pub fn q_reconstruction_check(pair: &BtPair, it: usize, ix: usize) -> Result<f64> {
    let coeffs = bt_coefficients(pair, it, ix)?;
    let diff: Vec<C64> = pair.u_tilde.at(it, ix).iter().zip(pair.u.at(it, ix)).map(|(a, b)| a - b).collect();
    Ok(q_reconstruction_residual(&diff, pair.kappa, coeffs.d))
}

/// The same identity for an explicit difference vector and d.
pub fn q_reconstruction_residual(diff: &[C64], kappa: i32, d: C64) -> f64 {
    let root = C64::new(kappa as f64, 0.0).sqrt();
    let q: Vec<C64> = diff.iter().map(|z| z / (I * root * d)).collect();
    let m = vec_norm(diff).powi(2);
    (vec_norm(&q).powi(2) + m / (d * d)).norm()
}

/// ||-U^T(-lambda; u) - U(lambda; -u*)||_F.
pub fn conjugation_identity_residual(p: &LaxParams, u: &[C64], lambda: C64) -> Result<f64> {
    let a = -build_u(p, u, -lambda)?.transpose();
    let v: Vec<C64> = u.iter().map(|z| -z.conj()).collect();
    let b = build_u(p, &v, lambda)?;
    Ok(frob(&(a - b)))
}

/// v(x, t) = -conj(u(x, 2 t_mid - t)), time reflected about the grid midpoint.
pub fn conjugate_reflect(g: &FieldGrid) -> Result<FieldGrid> {
    if g.nt == 0 || g.nx == 0 || g.ncomp == 0 {
        return Err(Error::NotReflectable("empty grid".into()));
    }
    if !(g.dt > 0.0) || !g.t0.is_finite() {
        return Err(Error::NotReflectable("time axis is not a valid uniform grid".into()));
    }
    let mut out = g.clone();
    for it in 0..g.nt {
        for ix in 0..g.nx {
            let src = g.at(g.nt - 1 - it, ix);
            for (o, s) in out.at_mut(it, ix).iter_mut().zip(src) {
                *o = -s.conj();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darboux::{DarbouxPole, DressedField, DressingMode, SolitonSpec};
    use crate::field::GridSpec;
    use crate::lax_core::{make_params, vnls_residual};
    use crate::linalg::c;

    fn soliton_grid(n: usize, kappa: i32, mu: C64, cv: &[C64], spec: GridSpec) -> FieldGrid {
        let s = SolitonSpec::new(make_params(n, kappa).unwrap(), vec![DarbouxPole::vector(mu, cv).unwrap()]).unwrap();
        FieldGrid::sample(&DressedField::new(s, DressingMode::Single(0)), spec).unwrap()
    }

    #[test]
    fn coefficients_satisfy_quadratic_and_vieta() {
        for (mu, kappa, m) in [(I, -1, 0.3), (c(0.3, 1.0), 1, 2.0), (c(-0.5, 2.0), -1, 5.0)] {
            let w = (mu.conj() - mu) * 0.5;
            let eta = principal_sqrt(w * w - kappa as f64 * m);
            let dp = coefficients_from(mu, kappa, 1, eta).d;
            let dm = coefficients_from(mu, kappa, -1, eta).d;
            assert!(quadratic_residual(mu, kappa, dp, m).norm() < 1e-12);
            assert!(quadratic_residual(mu, kappa, dm, m).norm() < 1e-12);
            assert!((dp * dm - m / kappa as f64).norm() < 1e-12);
        }
    }

    #[test]
    fn coefficient_examples() {
        // kappa = +1, w = -i, |du|^2 = 1: eta = sqrt(-2) = i sqrt 2
        let w = C64::new(0.0, -1.0);
        let eta = principal_sqrt(w * w - 1.0);
        assert!((eta - c(0.0, 2f64.sqrt())).norm() < 1e-15);
        // mu = i, kappa = -1, |du| -> 0: d in {2i, 0}
        let e0 = principal_sqrt(w * w);
        let ds = [coefficients_from(I, -1, 1, e0).d, coefficients_from(I, -1, -1, e0).d];
        assert!(ds.iter().any(|d| (d - c(0.0, 2.0)).norm() < 1e-15));
        assert!(ds.iter().any(|d| d.norm() < 1e-15));
    }

    #[test]
    fn zero_pair_is_degenerate_everywhere() {
        let spec = GridSpec::from_ranges(-1.0, 1.0, 0.1, 0.0, 0.2, 0.1).unwrap();
        let z = FieldGrid::zeros(spec, 1);
        let pair = BtPair::new(z.clone(), z, I, -1, 1).unwrap();
        let r = bt_t_residual(&pair).unwrap();
        assert_eq!(r.degenerate, r.field.rows * r.field.cols);
        assert!(matches!(bt_coefficients(&pair, 1, 3), Err(Error::DegeneratePoint { .. })));
    }

    #[test]
    fn darboux_pair_has_a_vanishing_branch() {
        let mu = c(0.3, 1.0);
        let spec = GridSpec::centred_in_time(-8.0, 8.0, 0.02, 0.2, 2e-4).unwrap();
        let ut = soliton_grid(2, -1, mu, &[c(1.0, 0.0), c(1.0, 0.0)], spec);
        let pair = BtPair::new(FieldGrid::zeros(spec, 1), ut, mu, -1, 1).unwrap();
        let rep = select_branch(&pair).unwrap();
        let other = -rep.best;
        assert!(rep.x_of(rep.best) < 1e-5, "{rep:?}");
        assert!(rep.t_of(rep.best) < 1e-4, "{rep:?}");
        assert!(rep.x_of(other) > 1e-3 && rep.t_of(other) > 1e-3);
        // the principal root alone cannot serve one branch across the soliton core
        let principal = select_branch(&pair.with_eta_mode(EtaMode::Principal)).unwrap();
        assert!(principal.x_of(principal.best) > 1e-3);
        assert!(eta_field(&pair).cut_crossings.len() >= 1);
    }

    #[test]
    fn mismatched_pole_leaves_a_floor() {
        let spec = GridSpec::centred_in_time(-8.0, 8.0, 0.02, 0.0, 2e-4).unwrap();
        let ut = soliton_grid(2, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)], spec);
        let pair = BtPair::new(FieldGrid::zeros(spec, 1), ut, c(0.3, 1.3), -1, 1).unwrap();
        let rep = select_branch(&pair).unwrap();
        assert!(rep.x_of(rep.best) > 1e-3);
    }

    #[test]
    fn reconstruction_identity() {
        let mu = c(0.3, 1.0);
        let spec = GridSpec::centred_in_time(-5.0, 5.0, 0.1, 0.0, 0.01).unwrap();
        let ut = soliton_grid(3, -1, mu, &[c(1.0, 0.0), c(0.5, 0.5), c(1.0, 0.0)], spec);
        let pair = BtPair::new(FieldGrid::zeros(spec, 2), ut, mu, -1, 1).unwrap();
        for ix in [5, 40, 77] {
            assert!(q_reconstruction_check(&pair, 1, ix).unwrap() < 1e-10);
        }
        let diff = [c(0.3, 0.1), c(-0.2, 0.4)];
        // a d off the quadratic still gives zero when it is purely imaginary; a real part breaks it
        assert!(q_reconstruction_residual(&diff, -1, c(0.5, 0.7)) > 1e-3);
        let d = c(0.0, 0.7);
        let r1 = q_reconstruction_residual(&diff, -1, d);
        let q1 = vec_norm(&diff).powi(2) / d.norm_sqr();
        let twice: Vec<C64> = diff.iter().map(|z| z * 2.0).collect();
        let q2 = vec_norm(&twice).powi(2) / d.norm_sqr();
        assert!(r1 < 1e-14 && (q2 / q1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn conjugation_identity_examples() {
        let p = make_params(3, -1).unwrap();
        let u = [c(0.4, -0.3), c(1.1, 0.2)];
        assert!(conjugation_identity_residual(&p, &u, c(0.7, 1.3)).unwrap() < 1e-15);
        assert_eq!(conjugation_identity_residual(&p, &[c(0.0, 0.0); 2], c(0.7, 1.3)).unwrap(), 0.0);
        // dropping the sign of u* breaks it
        let a = -build_u(&p, &u, -c(0.7, 1.3)).unwrap().transpose();
        let v: Vec<C64> = u.iter().map(|z| z.conj()).collect();
        assert!(frob(&(a - build_u(&p, &v, c(0.7, 1.3)).unwrap())) > 0.1);
    }

    #[test]
    fn conjugate_reflect_properties() {
        let spec = GridSpec::centred_in_time(-6.0, 6.0, 0.05, 0.0, 1.25e-3).unwrap();
        let g = soliton_grid(2, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)], spec);
        let v = conjugate_reflect(&g).unwrap();
        assert_eq!(conjugate_reflect(&v).unwrap(), g);
        assert!(vnls_residual(&v, -1).unwrap().max() < 1e-3);
        let z = FieldGrid::zeros(spec, 1);
        assert!(conjugate_reflect(&z).unwrap().values.iter().all(|q| q.norm() == 0.0));
    }
}
