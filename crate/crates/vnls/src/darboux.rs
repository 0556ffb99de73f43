//! Darboux matrices, projectors, and single-pole / n-pole dressing of the vacuum.

use crate::error::{Error, Result};
use crate::field::FieldClosure;
use crate::lax_core::{numeric_fundamental, vacuum_fundamental, LaxParams};
use crate::linalg::{cond2, frob, laplace_det, lu_solve, CMat, CVec, C64, COND_CEILING, I};

/// A pole mu (Im mu != 0) with its N x s constant matrix C.
#[derive(Debug, Clone, PartialEq)]
pub struct DarbouxPole {
    pub mu: C64,
    pub c: CMat,
}

impl DarbouxPole {
    pub fn new(mu: C64, c: CMat) -> Result<Self> {
        if mu.im == 0.0 {
            return Err(Error::InvalidParams(format!("pole {mu} must have nonzero imaginary part")));
        }
        if c.ncols() == 0 || c.ncols() >= c.nrows() {
            return Err(Error::InvalidParams(format!(
                "C must be N x s with 1 <= s <= N - 1, got {} x {}",
                c.nrows(),
                c.ncols()
            )));
        }
        if cond2(&c) > COND_CEILING {
            return Err(Error::InvalidParams("C must have full column rank".into()));
        }
        Ok(Self { mu, c })
    }

    /// Rank-one pole from a column vector.
    pub fn vector(mu: C64, c: &[C64]) -> Result<Self> {
        Self::new(mu, CMat::from_column_slice(c.len(), 1, c))
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }
}

/// Lax parameters together with the list of dressing poles.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitonSpec {
    pub params: LaxParams,
    pub poles: Vec<DarbouxPole>,
}

impl SolitonSpec {
    pub fn new(params: LaxParams, poles: Vec<DarbouxPole>) -> Result<Self> {
        for (i, p) in poles.iter().enumerate() {
            if p.c.nrows() != params.n {
                return Err(Error::InvalidParams(format!("pole {i}: C has {} rows, expected {}", p.c.nrows(), params.n)));
            }
            for (j, o) in poles.iter().enumerate() {
                if (p.mu - o.mu.conj()).norm() < 1e-12 {
                    return Err(Error::InvalidParams(format!("poles {i} and {j} satisfy mu_i = conj(mu_j)")));
                }
                if i < j && (p.mu - o.mu).norm() < 1e-12 {
                    return Err(Error::InvalidParams(format!("poles {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { params, poles })
    }

    fn pole(&self, idx: usize) -> Result<&DarbouxPole> {
        self.poles
            .get(idx)
            .ok_or_else(|| Error::InvalidParams(format!("pole index {idx} out of range")))
    }

    fn all_rank_one(&self) -> Result<()> {
        if self.poles.is_empty() {
            return Err(Error::InvalidParams("no poles".into()));
        }
        if self.poles.iter().any(|p| p.rank() != 1) {
            return Err(Error::InvalidParams("n-pole dressing needs rank-one poles".into()));
        }
        Ok(())
    }
}

/// P = Q q* gram^{-1} q^T with gram = q^T Q q*.
#[derive(Debug, Clone)]
pub struct Projector {
    pub p: CMat,
    pub q: CMat,
    pub gram: CMat,
}

impl Projector {
    /// ||P^2 - P||_F.
    pub fn idempotency_defect(&self) -> f64 {
        frob(&(&self.p * &self.p - &self.p))
    }

    /// (||(1 - P) Q q*||, ||q^T (1 - P)||).
    pub fn kernel_defects(&self, params: &LaxParams) -> (f64, f64) {
        let n = self.p.nrows();
        let one_minus = CMat::identity(n, n) - &self.p;
        let qq = params.q_matrix() * self.q.map(|z| z.conj());
        (frob(&(&one_minus * qq)), frob(&(self.q.transpose() * one_minus)))
    }
}

/// q with q^T = C^T Q Psi(mu*)^dagger Q, Psi the vacuum fundamental solution.
pub fn q_from_vacuum(spec: &SolitonSpec, pole_index: usize, x: f64, t: f64) -> Result<CMat> {
    let pole = spec.pole(pole_index)?;
    let q = spec.params.q_matrix();
    let psi = vacuum_fundamental(&spec.params, pole.mu.conj(), x, t)?;
    let qt = pole.c.transpose() * &q * psi.adjoint() * &q;
    Ok(qt.transpose())
}

fn gram_condition(q: &CMat, gram: &CMat) -> f64 {
    let sv = gram.clone().singular_values();
    let smin = sv.min();
    let scale = q.clone().singular_values().max().powi(2);
    if !(smin > 0.0) {
        f64::INFINITY
    } else {
        scale / smin
    }
}

/// Builds the projector; `SingularGram` (with NaN location) when the Gram matrix is degenerate.
pub fn projector(p: &LaxParams, q: &CMat) -> Result<Projector> {
    projector_at(p, q, f64::NAN, f64::NAN)
}

fn projector_at(p: &LaxParams, q: &CMat, x: f64, t: f64) -> Result<Projector> {
    if q.nrows() != p.n {
        return Err(Error::InvalidParams(format!("q has {} rows, expected {}", q.nrows(), p.n)));
    }
    let qm = p.q_matrix();
    let qc = q.map(|z| z.conj());
    let gram = q.transpose() * &qm * &qc;
    let cond = gram_condition(q, &gram);
    if cond > COND_CEILING {
        return Err(Error::SingularGram { x, t, cond });
    }
    let ginv_qt = lu_solve(&gram, &q.transpose()).ok_or(Error::SingularGram { x, t, cond })?;
    let pm = &qm * &qc * ginv_qt;
    Ok(Projector { p: pm, q: q.clone(), gram })
}

/// M(lambda) = 1 + (mu - mu*) / (lambda - mu) P.
pub fn darboux_matrix(pr: &Projector, mu: C64, lambda: C64) -> Result<CMat> {
    if (lambda - mu).norm() == 0.0 {
        return Err(Error::AtPole(format!("{lambda}")));
    }
    let n = pr.p.nrows();
    Ok(CMat::identity(n, n) + &pr.p * ((mu - mu.conj()) / (lambda - mu)))
}

/// M^{-1}(lambda) = 1 + Q M0^dagger Q / (lambda - mu*) with M0 = (mu - mu*) P.
pub fn darboux_matrix_inverse(params: &LaxParams, pr: &Projector, mu: C64, lambda: C64) -> Result<CMat> {
    if (lambda - mu.conj()).norm() == 0.0 {
        return Err(Error::AtPole(format!("{lambda}")));
    }
    let q = params.q_matrix();
    let m0 = &pr.p * (mu - mu.conj());
    let n = pr.p.nrows();
    Ok(CMat::identity(n, n) + &q * m0.adjoint() * &q / (lambda - mu.conj()))
}

/// The seed solution being dressed.
pub enum Seed<'a> {
    Vacuum,
    /// An arbitrary seed; its fundamental solution is integrated numerically with `steps` RK4 steps per leg.
    Numeric { field: &'a dyn FieldClosure, steps: usize },
}

fn dressing_shift(params: &LaxParams, mu: C64, pr: &Projector) -> Vec<C64> {
    let n = params.n;
    let f = I * (mu.conj() - mu) / params.beta;
    (0..n - 1).map(|j| f * pr.p[(n - 1, j)]).collect()
}

/// One dressing step u -> u + i (mu* - mu) / sqrt(kappa) P_{N j}.
pub fn dress_once(spec: &SolitonSpec, pole_index: usize, seed: &Seed<'_>, x: f64, t: f64) -> Result<Vec<C64>> {
    let pole = spec.pole(pole_index)?;
    let params = &spec.params;
    let (u, q) = match seed {
        Seed::Vacuum => (vec![C64::new(0.0, 0.0); params.ncomp()], q_from_vacuum(spec, pole_index, x, t)?),
        Seed::Numeric { field, steps } => {
            let nf = numeric_fundamental(params, *field, pole.mu, x, t, *steps)?;
            let inv = nf.psi.try_inverse().ok_or_else(|| Error::NonFinite("fundamental solution not invertible".into()))?;
            (field.eval(x, t)?, (pole.c.transpose() * inv).transpose())
        }
    };
    let pr = projector_at(params, &q, x, t)?;
    let shift = dressing_shift(params, pole.mu, &pr);
    Ok(u.iter().zip(shift).map(|(a, b)| a + b).collect())
}

/// Rank-one vacuum dressing written out explicitly:
/// u_j = -i (mu* - mu) sqrt(kappa) q_N* q_j / (sum_{k<N} |q_k|^2 - kappa |q_N|^2).
pub fn dress_once_explicit(spec: &SolitonSpec, pole_index: usize, x: f64, t: f64) -> Result<Vec<C64>> {
    let pole = spec.pole(pole_index)?;
    if pole.rank() != 1 {
        return Err(Error::InvalidParams("explicit form needs a rank-one pole".into()));
    }
    let params = &spec.params;
    let n = params.n;
    let q = q_from_vacuum(spec, pole_index, x, t)?;
    let den: f64 = (0..n - 1).map(|k| q[(k, 0)].norm_sqr()).sum::<f64>() - params.kappa_f() * q[(n - 1, 0)].norm_sqr();
    let f = -I * (pole.mu.conj() - pole.mu) * params.beta * q[(n - 1, 0)].conj() / den;
    Ok((0..n - 1).map(|j| f * q[(j, 0)]).collect())
}

/// P_{N j} as the determinant ratio det[[0, kappa q_N^*], [q_j, G]] / det G, expanded by cofactors.
pub fn projector_entry_det_ratio(params: &LaxParams, q: &CMat, j: usize) -> C64 {
    let n = params.n;
    let s = q.ncols();
    let qm = params.q_matrix();
    let gram = q.transpose() * &qm * q.map(|z| z.conj());
    let mut b = CMat::zeros(s + 1, s + 1);
    for a in 0..s {
        b[(0, a + 1)] = params.kappa_f() * q[(n - 1, a)].conj();
        b[(a + 1, 0)] = q[(j, a)];
        for bb in 0..s {
            b[(a + 1, bb + 1)] = gram[(a, bb)];
        }
    }
    laplace_det(&b) / laplace_det(&gram)
}

/// Pole vectors, Cauchy-type matrix and solved residue vectors of the n-pole Darboux matrix.
#[derive(Debug, Clone)]
pub struct MultiPole {
    /// q_i, each normalised to unit Euclidean norm (the residues p_i q_i^T do not depend on it).
    pub q: Vec<CVec>,
    /// p_i solving sum_i (q_i, q_j) p_i = Q q_j^*.
    pub p: Vec<CVec>,
    /// kmat[(i, j)] = (q_i, q_j) = q_i^T Q q_j^* / (mu_i - mu_j^*).
    pub kmat: CMat,
    pub cond: f64,
}

fn unit_pole_vectors(spec: &SolitonSpec, x: f64, t: f64) -> Result<Vec<CVec>> {
    (0..spec.poles.len())
        .map(|i| {
            let q = q_from_vacuum(spec, i, x, t)?;
            let v = CVec::from_iterator(spec.params.n, q.column(0).iter().cloned());
            let nrm = v.norm();
            Ok(v / C64::new(nrm, 0.0))
        })
        .collect()
}

fn cauchy_matrix(spec: &SolitonSpec, q: &[CVec]) -> CMat {
    let qm = spec.params.q_matrix();
    let n = q.len();
    CMat::from_fn(n, n, |i, j| {
        let num = (q[i].transpose() * &qm * q[j].map(|z| z.conj()))[(0, 0)];
        num / (spec.poles[i].mu - spec.poles[j].mu.conj())
    })
}

/// Right-hand sides r_j = Q q_j^*, stacked as rows.
fn rhs_rows(spec: &SolitonSpec, q: &[CVec]) -> CMat {
    let qd = &spec.params.q;
    CMat::from_fn(q.len(), spec.params.n, |j, c| q[j][c].conj() * qd[c])
}

/// Solves the n-pole kernel system by one dense LU solve.
pub fn multi_pole_p(spec: &SolitonSpec, x: f64, t: f64) -> Result<MultiPole> {
    spec.all_rank_one()?;
    let q = unit_pole_vectors(spec, x, t)?;
    let kmat = cauchy_matrix(spec, &q);
    let cond = cond2(&kmat);
    if cond > COND_CEILING {
        return Err(Error::SingularCauchy { x, t, cond });
    }
    // sum_i K_ij p_i = r_j  <=>  K^T P = R with P holding p_i^T as rows
    let sol = lu_solve(&kmat.transpose(), &rhs_rows(spec, &q)).ok_or(Error::SingularCauchy { x, t, cond })?;
    let p = (0..q.len()).map(|i| sol.row(i).transpose()).collect();
    Ok(MultiPole { q, p, kmat, cond })
}

/// Largest relative residual of the kernel system for a computed set of p_i.
pub fn multi_pole_residual(spec: &SolitonSpec, mp: &MultiPole) -> f64 {
    let r = rhs_rows(spec, &mp.q);
    let n = mp.q.len();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let mut acc = CVec::zeros(spec.params.n);
        for i in 0..n {
            acc += &mp.p[i] * mp.kmat[(i, j)];
        }
        let rj = r.row(j).transpose();
        worst = worst.max((acc - &rj).norm() / rj.norm().max(f64::MIN_POSITIVE));
    }
    worst
}

/// The same p_i by Cramer's rule with literal cofactor determinants.
///
/// The system sum_i K_ij p_i = r_j has coefficient matrix with row j, column i equal to
/// (q_i, q_j); p_i replaces column i by r_j.
pub fn multi_pole_p_cramer(spec: &SolitonSpec, x: f64, t: f64) -> Result<MultiPole> {
    spec.all_rank_one()?;
    let q = unit_pole_vectors(spec, x, t)?;
    let kmat = cauchy_matrix(spec, &q);
    let cond = cond2(&kmat);
    let a = kmat.transpose();
    let det = laplace_det(&a);
    if det.norm() == 0.0 {
        return Err(Error::SingularCauchy { x, t, cond });
    }
    let r = rhs_rows(spec, &q);
    let n = q.len();
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = CVec::zeros(spec.params.n);
        for comp in 0..spec.params.n {
            let mut m = a.clone();
            for j in 0..n {
                m[(j, i)] = r[(j, comp)];
            }
            v[comp] = laplace_det(&m) / det;
        }
        p.push(v);
    }
    Ok(MultiPole { q, p, kmat, cond })
}

/// n-soliton on the vacuum: u_i = -(i / sqrt(kappa)) sum_k p_{k,N} q_{k,i}.
pub fn n_soliton(spec: &SolitonSpec, x: f64, t: f64) -> Result<Vec<C64>> {
    let mp = multi_pole_p(spec, x, t)?;
    let n = spec.params.n;
    let f = -I / spec.params.beta;
    Ok((0..n - 1)
        .map(|i| f * mp.p.iter().zip(&mp.q).map(|(p, q)| p[n - 1] * q[i]).sum::<C64>())
        .collect())
}

/// n-soliton through the determinant ratio u_i = -(i / sqrt(kappa)) tau_i / tau, both by cofactors.
///
/// tau = det[(q_k, q_j)] and tau_i borders that matrix (row j, column k holding (q_k, q_j))
/// with the top row q_{k,i} and the left column kappa q_{j,N}^*.
pub fn n_soliton_tau(spec: &SolitonSpec, x: f64, t: f64) -> Result<Vec<C64>> {
    spec.all_rank_one()?;
    let q = unit_pole_vectors(spec, x, t)?;
    let kt = cauchy_matrix(spec, &q).transpose();
    let tau = laplace_det(&kt);
    if tau.norm() == 0.0 {
        return Err(Error::SingularCauchy { x, t, cond: f64::INFINITY });
    }
    let n = spec.params.n;
    let m = q.len();
    let f = -I / spec.params.beta;
    Ok((0..n - 1)
        .map(|i| {
            let mut b = CMat::zeros(m + 1, m + 1);
            for k in 0..m {
                b[(0, k + 1)] = q[k][i];
                b[(k + 1, 0)] = spec.params.kappa_f() * q[k][n - 1].conj();
                for j in 0..m {
                    b[(k + 1, j + 1)] = kt[(k, j)];
                }
            }
            f * laplace_det(&b) / tau
        })
        .collect())
}

/// ||sum_i M_i + sum_i Q M_i^dagger Q||_F with M_i = p_i q_i^T.
pub fn residue_sum_defect(spec: &SolitonSpec, x: f64, t: f64) -> Result<f64> {
    let mp = multi_pole_p(spec, x, t)?;
    let qm = spec.params.q_matrix();
    let mut s = CMat::zeros(spec.params.n, spec.params.n);
    for (p, q) in mp.p.iter().zip(&mp.q) {
        let mi = p * q.transpose();
        s += &mi + &qm * mi.adjoint() * &qm;
    }
    Ok(frob(&s))
}

/// Composes elementary rank-one dressings pole by pole.
pub fn chained_dressing(spec: &SolitonSpec, x: f64, t: f64) -> Result<Vec<C64>> {
    spec.all_rank_one()?;
    let params = &spec.params;
    let n = params.n;
    let mut u = vec![C64::new(0.0, 0.0); n - 1];
    let mut done: Vec<(C64, Projector)> = Vec::new();
    for k in 0..spec.poles.len() {
        let mu = spec.poles[k].mu;
        let mut qt = q_from_vacuum(spec, k, x, t)?.transpose();
        for (mui, pri) in &done {
            qt = qt * darboux_matrix_inverse(params, pri, *mui, mu)?;
        }
        let nrm = frob(&qt);
        let q = qt.transpose() / C64::new(nrm, 0.0);
        let pr = projector_at(params, &q, x, t)?;
        for (a, b) in u.iter_mut().zip(dressing_shift(params, mu, &pr)) {
            *a += b;
        }
        done.push((mu, pr));
    }
    Ok(u)
}

/// How a [`DressedField`] evaluates the dressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DressingMode {
    /// Single pole `idx` on the vacuum (any rank).
    Single(usize),
    /// All poles at once through the n-pole kernel system.
    NPole,
    /// Elementary dressings composed one pole at a time.
    Chained,
}

/// A dressed solution viewed as a field closure.
#[derive(Debug, Clone)]
pub struct DressedField {
    pub spec: SolitonSpec,
    pub mode: DressingMode,
}

impl DressedField {
    pub fn new(spec: SolitonSpec, mode: DressingMode) -> Self {
        Self { spec, mode }
    }
}

impl FieldClosure for DressedField {
    fn n_comp(&self) -> usize {
        self.spec.params.ncomp()
    }

    fn eval(&self, x: f64, t: f64) -> Result<Vec<C64>> {
        match self.mode {
            DressingMode::Single(i) => dress_once(&self.spec, i, &Seed::Vacuum, x, t),
            DressingMode::NPole => n_soliton(&self.spec, x, t),
            DressingMode::Chained => chained_dressing(&self.spec, x, t),
        }
    }
}

/// Refines the location of max |u(., t)| near `x_guess` by golden-section search on [x_guess - h, x_guess + h].
pub fn refine_peak(f: &dyn FieldClosure, t: f64, x_guess: f64, h: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let amp = |x: f64| -> Result<f64> { Ok(crate::linalg::vec_norm(&f.eval(x, t)?)) };
    let (mut a, mut b) = (x_guess - h, x_guess + h);
    let mut c1 = b - g * (b - a);
    let mut c2 = a + g * (b - a);
    let mut f1 = amp(c1)?;
    let mut f2 = amp(c2)?;
    for _ in 0..80 {
        if f1 > f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - g * (b - a);
            f1 = amp(c1)?;
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + g * (b - a);
            f2 = amp(c2)?;
        }
    }
    let xm = 0.5 * (a + b);
    Ok((xm, amp(xm)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldGrid, GridSpec};
    use crate::lax_core::{build_u, make_params};
    use crate::linalg::c;

    fn spec1(n: usize, kappa: i32, mu: C64, cvec: &[C64]) -> SolitonSpec {
        SolitonSpec::new(make_params(n, kappa).unwrap(), vec![DarbouxPole::vector(mu, cvec).unwrap()]).unwrap()
    }

    #[test]
    fn pole_validation() {
        assert!(DarbouxPole::vector(c(1.0, 0.0), &[c(1.0, 0.0), c(1.0, 0.0)]).is_err());
        assert!(DarbouxPole::new(I, CMat::zeros(2, 1)).is_err());
        assert!(DarbouxPole::new(I, CMat::identity(2, 2)).is_err());
        let p = make_params(2, -1).unwrap();
        let a = DarbouxPole::vector(I, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let b = DarbouxPole::vector(-I, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(SolitonSpec::new(p.clone(), vec![a.clone(), b]).is_err());
        assert!(SolitonSpec::new(p, vec![a.clone(), a]).is_err());
    }

    #[test]
    fn q_at_origin_is_c() {
        let s = spec1(3, 1, c(0.3, 1.0), &[c(1.0, 2.0), c(0.0, 1.0), c(-1.0, 0.5)]);
        let q = q_from_vacuum(&s, 0, 0.0, 0.0).unwrap();
        assert!(frob(&(q - &s.poles[0].c)) < 1e-15);
    }

    #[test]
    fn q_composes_vacuum_solution() {
        // q^T = C^T Q Psi(mu*)^dagger Q with Psi(-i; x = 1) = diag(e^{-1/2}, e^{1/2})
        let s = spec1(2, -1, I, &[c(1.0, 0.0), c(1.0, 0.0)]);
        let q = q_from_vacuum(&s, 0, 1.0, 0.0).unwrap();
        assert!((q[(0, 0)] - c((-0.5f64).exp(), 0.0)).norm() < 1e-14);
        assert!((q[(1, 0)] - c(0.5f64.exp(), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn q_solves_vacuum_linear_problem() {
        let s = spec1(3, -1, c(0.4, 0.8), &[c(1.0, 0.2), c(0.3, -1.0), c(0.5, 0.5)]);
        let (x, t, h) = (0.7, 0.3, 1e-5);
        let dq = (q_from_vacuum(&s, 0, x + h, t).unwrap() - q_from_vacuum(&s, 0, x - h, t).unwrap()) / C64::new(2.0 * h, 0.0);
        let u = build_u(&s.params, &[c(0.0, 0.0); 2], s.poles[0].mu).unwrap();
        let q = q_from_vacuum(&s, 0, x, t).unwrap();
        assert!(frob(&(dq.transpose() + q.transpose() * u)) < 1e-8);
    }

    #[test]
    fn projector_examples() {
        let p = make_params(2, -1).unwrap();
        let pr = projector(&p, &CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap();
        assert!(frob(&(pr.p - CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]))) < 1e-15);
        let pr = projector(&p, &CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(1.0, 0.0)])).unwrap();
        assert!(frob(&(pr.p - CMat::from_element(2, 2, c(0.5, 0.0)))) < 1e-15);
        let p = make_params(2, 1).unwrap();
        let e = projector(&p, &CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(1.0, 0.0)]));
        assert!(matches!(e, Err(Error::SingularGram { .. })));
    }

    #[test]
    fn darboux_matrix_inverse_and_kernels() {
        let s = spec1(3, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(0.5, 0.5), c(0.2, -1.0)]);
        let mu = s.poles[0].mu;
        let q = q_from_vacuum(&s, 0, 0.4, 0.2).unwrap();
        let pr = projector(&s.params, &q).unwrap();
        assert!(pr.idempotency_defect() < 1e-12);
        for lam in [mu + 1.0, mu + I, mu.conj() * 3.0] {
            let m = darboux_matrix(&pr, mu, lam).unwrap();
            let mi = darboux_matrix_inverse(&s.params, &pr, mu, lam).unwrap();
            assert!(frob(&(m * mi - CMat::identity(3, 3))) < 1e-12);
        }
        let far = darboux_matrix(&pr, mu, c(1e9, 0.0)).unwrap();
        assert!(frob(&(far - CMat::identity(3, 3))) < 1e-8);
        let m_star = darboux_matrix(&pr, mu, mu.conj()).unwrap();
        let qq = s.params.q_matrix() * q.map(|z| z.conj());
        assert!(frob(&(&m_star * qq)) < 1e-12);
        assert!(frob(&(q.transpose() * &m_star)) < 1e-12);
        assert!(darboux_matrix(&pr, mu, mu).is_err());
    }

    #[test]
    fn zero_last_row_gives_zero_field() {
        let s = spec1(2, -1, I, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let u = dress_once(&s, 0, &Seed::Vacuum, 0.3, 0.1).unwrap();
        assert_eq!(u[0], c(0.0, 0.0));
    }

    #[test]
    fn one_soliton_closed_form() {
        // mu = i, C = (1, 1): u(x, 0) = -i sech(x)
        let s = spec1(2, -1, I, &[c(1.0, 0.0), c(1.0, 0.0)]);
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let u = dress_once(&s, 0, &Seed::Vacuum, x, 0.0).unwrap();
            assert!((u[0] - c(0.0, -1.0 / f64::cosh(x))).norm() < 1e-13);
            let e = dress_once_explicit(&s, 0, x, 0.0).unwrap();
            assert!((u[0] - e[0]).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_polarization_component_vanishes() {
        let s3 = spec1(3, -1, I, &[c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let s2 = spec1(2, -1, I, &[c(1.0, 0.0), c(1.0, 0.0)]);
        for x in [-2.0, 0.0, 0.7] {
            let u3 = dress_once(&s3, 0, &Seed::Vacuum, x, 0.4).unwrap();
            let u2 = dress_once(&s2, 0, &Seed::Vacuum, x, 0.4).unwrap();
            assert_eq!(u3[1], c(0.0, 0.0));
            // same profile up to the x-scale set by rho (N=3: rho=1/2, a=-2/3)
            assert!(u3[0].norm() > 0.0 && u2[0].norm() > 0.0);
        }
    }

    #[test]
    fn det_ratio_matches_projector_rank_two() {
        let p = make_params(4, 1).unwrap();
        let q = CMat::from_row_slice(4, 2, &[c(1.0, 0.2), c(0.1, 0.0), c(0.3, -0.5), c(1.0, 1.0), c(-0.4, 0.7), c(0.2, 0.3), c(0.1, 0.0), c(0.5, -0.2)]);
        let pr = projector(&p, &q).unwrap();
        for j in 0..3 {
            let r = projector_entry_det_ratio(&p, &q, j);
            assert!((r - pr.p[(3, j)]).norm() < 1e-12);
        }
    }

    #[test]
    fn gauge_invariance() {
        let p = make_params(3, -1).unwrap();
        let q = CMat::from_row_slice(3, 2, &[c(1.0, 0.2), c(0.1, 0.0), c(0.3, -0.5), c(1.0, 1.0), c(-0.4, 0.7), c(0.2, 0.3)]);
        let g = CMat::from_row_slice(2, 2, &[c(2.0, 1.0), c(0.5, 0.0), c(-1.0, 0.3), c(0.7, -0.2)]);
        let a = projector(&p, &q).unwrap();
        let b = projector(&p, &(&q * g)).unwrap();
        assert!(frob(&(a.p - b.p)) < 1e-12);
    }

    #[test]
    fn single_pole_n1_reductions() {
        let s = spec1(3, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(0.5, 0.5), c(0.2, -1.0)]);
        let (x, t) = (0.6, -0.2);
        let mp = multi_pole_p(&s, x, t).unwrap();
        let q = &mp.q[0];
        let mu = s.poles[0].mu;
        let qq = CVec::from_iterator(3, (0..3).map(|k| q[k].conj() * s.params.q[k]));
        let g = (q.transpose() * &qq)[(0, 0)];
        let want = qq * ((mu - mu.conj()) / g);
        assert!((&mp.p[0] - want).norm() < 1e-12);
        let a = n_soliton(&s, x, t).unwrap();
        let b = dress_once(&s, 0, &Seed::Vacuum, x, t).unwrap();
        for k in 0..2 {
            assert!((a[k] - b[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn two_pole_system_and_cross_checks() {
        let p = make_params(3, -1).unwrap();
        let s = SolitonSpec::new(
            p,
            vec![
                DarbouxPole::vector(I, &[c(1.0, 0.0), c(0.3, 0.2), c(0.7, -0.1)]).unwrap(),
                DarbouxPole::vector(c(0.0, 2.0), &[c(0.2, 1.0), c(1.0, 0.0), c(-0.5, 0.4)]).unwrap(),
            ],
        )
        .unwrap();
        let (x, t) = (0.3, 0.1);
        let mp = multi_pole_p(&s, x, t).unwrap();
        assert!(multi_pole_residual(&s, &mp) < 1e-10);
        let a = n_soliton(&s, x, t).unwrap();
        let b = chained_dressing(&s, x, t).unwrap();
        let d = n_soliton_tau(&s, x, t).unwrap();
        for k in 0..2 {
            assert!((a[k] - b[k]).norm() < 1e-10, "{:?} vs {:?}", a, b);
            assert!((a[k] - d[k]).norm() < 1e-10);
        }
        assert!(residue_sum_defect(&s, x, t).unwrap() < 1e-10);
    }

    #[test]
    fn rigid_motion_of_one_soliton() {
        let s = spec1(2, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)]);
        let f = DressedField::new(s, DressingMode::Single(0));
        let mut peaks = Vec::new();
        for t in [0.0, 1.0, 5.0] {
            let g = FieldGrid::sample(&f, GridSpec::from_ranges(-10.0, 15.0, 0.05, t, t, 1.0).unwrap()).unwrap();
            let (_, xg) = g.row_peak(0);
            peaks.push(refine_peak(&f, t, xg, 0.1).unwrap().1);
        }
        for p in &peaks {
            assert!((p - 1.0).abs() < 1e-10, "{peaks:?}");
        }
    }
}
