//! Continuous vNLS Lax pair, fundamental solutions and PDE-level residuals.

use crate::error::{Error, Result};
use crate::field::{stencil, FieldClosure, FieldGrid};
use crate::linalg::{frob, real_diag, vec_norm, CMat, C64, I};

/// Default cap on |Re| of the exponents in the vacuum fundamental solution.
pub const EXPONENT_CAP: f64 = 700.0;

/// Constants of the Lax pair for matrix size `n` and nonlinearity sign `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxParams {
    pub n: usize,
    pub kappa: i32,
    pub rho: f64,
    pub a: f64,
    pub alpha: C64,
    pub beta: C64,
    /// Diagonal of Q = diag(1, ..., 1, -kappa).
    pub q: Vec<f64>,
}

pub fn make_params(n: usize, kappa: i32) -> Result<LaxParams> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("matrix size must be >= 2, got {n}")));
    }
    if kappa != 1 && kappa != -1 {
        return Err(Error::InvalidParams(format!("kappa must be +1 or -1, got {kappa}")));
    }
    let nf = n as f64;
    let a = (1.0 - nf) / nf;
    let mut q = vec![1.0; n];
    q[n - 1] = -(kappa as f64);
    Ok(LaxParams {
        n,
        kappa,
        rho: 1.0 / (nf - 1.0),
        a,
        alpha: I * a,
        // principal root: i for kappa = -1
        beta: C64::new(kappa as f64, 0.0).sqrt(),
        q,
    })
}

impl LaxParams {
    pub fn ncomp(&self) -> usize {
        self.n - 1
    }

    pub fn kappa_f(&self) -> f64 {
        self.kappa as f64
    }

    pub fn q_matrix(&self) -> CMat {
        real_diag(&self.q)
    }

    /// Diagonal of U1 = alpha diag(rho, ..., rho, -1).
    pub fn u1_diag(&self) -> Vec<C64> {
        let mut d = vec![self.alpha * self.rho; self.n];
        d[self.n - 1] = -self.alpha;
        d
    }

    pub fn u1(&self) -> CMat {
        let d = self.u1_diag();
        CMat::from_fn(self.n, self.n, |i, j| if i == j { d[i] } else { C64::new(0.0, 0.0) })
    }
}

fn check_len(p: &LaxParams, u: &[C64]) -> Result<()> {
    if u.len() != p.ncomp() {
        return Err(Error::InvalidParams(format!("field has {} components, expected {}", u.len(), p.ncomp())));
    }
    if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("field value".into()));
    }
    Ok(())
}

/// U0 with last column beta u* and last row beta u.
fn u0(p: &LaxParams, u: &[C64]) -> CMat {
    let n = p.n;
    let mut m = CMat::zeros(n, n);
    for k in 0..n - 1 {
        m[(k, n - 1)] = p.beta * u[k].conj();
        m[(n - 1, k)] = p.beta * u[k];
    }
    m
}

/// U(lambda) = lambda U1 + U0.
pub fn build_u(p: &LaxParams, u: &[C64], lambda: C64) -> Result<CMat> {
    check_len(p, u)?;
    Ok(p.u1() * lambda + u0(p, u))
}

/// V0 block matrix.
fn v0(p: &LaxParams, u: &[C64], ux: &[C64]) -> CMat {
    let n = p.n;
    let kap = p.kappa_f();
    let mut m = CMat::zeros(n, n);
    for k in 0..n - 1 {
        for l in 0..n - 1 {
            m[(k, l)] = I * kap * u[k].conj() * u[l];
        }
        m[(k, n - 1)] = -I * p.beta * ux[k].conj();
        m[(n - 1, k)] = I * p.beta * ux[k];
    }
    m[(n - 1, n - 1)] = -I * kap * vec_norm(u).powi(2);
    m
}

/// V(lambda) = -lambda^2 U1 - lambda U0 + V0.
pub fn build_v(p: &LaxParams, u: &[C64], ux: &[C64], lambda: C64) -> Result<CMat> {
    check_len(p, u)?;
    check_len(p, ux)?;
    Ok(p.u1() * (-lambda * lambda) - u0(p, u) * lambda + v0(p, u, ux))
}

/// ||U(lambda) + Q U(lambda*)^dagger Q||_F.
pub fn reduction_residual(p: &LaxParams, u: &[C64], lambda: C64) -> Result<f64> {
    let q = p.q_matrix();
    let a = build_u(p, u, lambda)?;
    let b = build_u(p, u, lambda.conj())?;
    Ok(frob(&(a + &q * b.adjoint() * &q)))
}

/// ||V(lambda) + Q V(lambda*)^dagger Q||_F.
pub fn reduction_residual_v(p: &LaxParams, u: &[C64], ux: &[C64], lambda: C64) -> Result<f64> {
    let q = p.q_matrix();
    let a = build_v(p, u, ux, lambda)?;
    let b = build_v(p, u, ux, lambda.conj())?;
    Ok(frob(&(a + &q * b.adjoint() * &q)))
}

/// exp(mu U1 x - mu^2 U1 t), the fundamental solution at u = 0 normalised at the origin.
pub fn vacuum_fundamental(p: &LaxParams, mu: C64, x: f64, t: f64) -> Result<CMat> {
    vacuum_fundamental_capped(p, mu, x, t, EXPONENT_CAP)
}

pub fn vacuum_fundamental_capped(p: &LaxParams, mu: C64, x: f64, t: f64, cap: f64) -> Result<CMat> {
    let d = p.u1_diag();
    let mut m = CMat::zeros(p.n, p.n);
    for k in 0..p.n {
        let e = mu * d[k] * x - mu * mu * d[k] * t;
        if e.re.abs() > cap || !e.re.is_finite() {
            return Err(Error::Overflow { exponent: e.re, cap });
        }
        m[(k, k)] = e.exp();
    }
    Ok(m)
}

/// Fundamental solution integrated numerically along two paths from the origin.
#[derive(Debug, Clone)]
pub struct NumericFundamental {
    /// Result of the t-leg at x = 0 followed by the x-leg at fixed t.
    pub psi: CMat,
    /// Relative Frobenius distance to the x-first path.
    pub path_discrepancy: f64,
}

fn rk4_matrix<F>(psi0: &CMat, s0: f64, s1: f64, steps: usize, gen: F) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    if steps == 0 {
        return Err(Error::StepUnderflow("zero steps requested".into()));
    }
    let h = (s1 - s0) / steps as f64;
    if h != 0.0 && s0 + h == s0 {
        return Err(Error::StepUnderflow(format!("step {h:e} vanishes against {s0}")));
    }
    let mut psi = psi0.clone();
    for k in 0..steps {
        let s = s0 + k as f64 * h;
        let a0 = gen(s)?;
        let am = gen(s + 0.5 * h)?;
        let a1 = gen(s + h)?;
        let k1 = &a0 * &psi;
        let hh = C64::new(0.5 * h, 0.0);
        let k2 = &am * (&psi + &k1 * hh);
        let k3 = &am * (&psi + &k2 * hh);
        let k4 = &a1 * (&psi + &k3 * C64::new(h, 0.0));
        psi += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
    }
    if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("fundamental solution".into()));
    }
    Ok(psi)
}

/// Integrates Psi_x = U(mu) Psi, Psi_t = V(mu) Psi from Psi(0, 0) = 1 with `steps` RK4 steps per leg.
pub fn numeric_fundamental(
    p: &LaxParams,
    u: &dyn FieldClosure,
    mu: C64,
    x: f64,
    t: f64,
    steps: usize,
) -> Result<NumericFundamental> {
    let id = CMat::identity(p.n, p.n);
    let v_at = |xx: f64, tt: f64| -> Result<CMat> {
        let uu = u.eval(xx, tt)?;
        let ux = u.eval_dx(xx, tt)?;
        build_v(p, &uu, &ux, mu)
    };
    let u_at = |xx: f64, tt: f64| -> Result<CMat> { build_u(p, &u.eval(xx, tt)?, mu) };

    let a = rk4_matrix(&id, 0.0, t, steps, |s| v_at(0.0, s))?;
    let psi = rk4_matrix(&a, 0.0, x, steps, |s| u_at(s, t))?;

    let b = rk4_matrix(&id, 0.0, x, steps, |s| u_at(s, 0.0))?;
    let psi_swap = rk4_matrix(&b, 0.0, t, steps, |s| v_at(x, s))?;

    let path_discrepancy = frob(&(&psi - &psi_swap)) / frob(&psi).max(f64::MIN_POSITIVE);
    Ok(NumericFundamental { psi, path_discrepancy })
}

/// Pointwise residuals on the interior of a grid, stored row-major.
#[derive(Debug, Clone)]
pub struct ResidualField {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ResidualField {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// |i u_t + u_xx - 2 kappa |u|^2 u| on interior points (4th-order x, 2nd-order t stencils).
pub fn vnls_residual(g: &FieldGrid, kappa: i32) -> Result<ResidualField> {
    g.validate()?;
    let kap = kappa as f64;
    let rows = g.nt - 2;
    let cols = g.nx - 4;
    let mut values = Vec::with_capacity(rows * cols);
    let mut r = vec![C64::new(0.0, 0.0); g.ncomp];
    for it in 1..g.nt - 1 {
        for ix in 2..g.nx - 2 {
            let u = g.at(it, ix);
            let m2 = vec_norm(u).powi(2);
            for k in 0..g.ncomp {
                let ut = stencil::d1_2(g.at(it - 1, ix)[k], g.at(it + 1, ix)[k], g.dt);
                let uxx = stencil::d2_4(
                    g.at(it, ix - 2)[k],
                    g.at(it, ix - 1)[k],
                    u[k],
                    g.at(it, ix + 1)[k],
                    g.at(it, ix + 2)[k],
                    g.dx,
                );
                r[k] = I * ut + uxx - 2.0 * kap * m2 * u[k];
            }
            values.push(vec_norm(&r));
        }
    }
    Ok(ResidualField { rows, cols, values })
}

fn x_derivs(g: &FieldGrid, it: usize, ix: usize) -> (Vec<C64>, Vec<C64>) {
    let mut ux = vec![C64::new(0.0, 0.0); g.ncomp];
    let mut uxx = ux.clone();
    for k in 0..g.ncomp {
        let (m2, m1, z, p1, p2) = (
            g.at(it, ix - 2)[k],
            g.at(it, ix - 1)[k],
            g.at(it, ix)[k],
            g.at(it, ix + 1)[k],
            g.at(it, ix + 2)[k],
        );
        ux[k] = stencil::d1_4(m2, m1, p1, p2, g.dx);
        uxx[k] = stencil::d2_4(m2, m1, z, p1, p2, g.dx);
    }
    (ux, uxx)
}

/// max over interior points of ||U_t - V_x + [U, V]||_F.
///
/// U_t comes from the 2nd-order time stencil applied to U; V_x is assembled from the
/// 4th-order stencils of u_x and u_xx through the entrywise derivative of V.
pub fn zero_curvature_residual(g: &FieldGrid, p: &LaxParams, lambda: C64) -> Result<f64> {
    g.validate()?;
    if g.ncomp != p.ncomp() {
        return Err(Error::InvalidParams("grid and parameters disagree on component count".into()));
    }
    let n = p.n;
    let kap = p.kappa_f();
    let mut worst: f64 = 0.0;
    for it in 1..g.nt - 1 {
        for ix in 2..g.nx - 2 {
            let u = g.at(it, ix);
            let (ux, uxx) = x_derivs(g, it, ix);
            let uu = build_u(p, u, lambda)?;
            let vv = build_v(p, u, &ux, lambda)?;
            let ut = (build_u(p, g.at(it + 1, ix), lambda)? - build_u(p, g.at(it - 1, ix), lambda)?) / C64::new(2.0 * g.dt, 0.0);

            let mut vx = -u0(p, &ux) * lambda;
            for k in 0..n - 1 {
                for l in 0..n - 1 {
                    vx[(k, l)] += I * kap * (ux[k].conj() * u[l] + u[k].conj() * ux[l]);
                }
                vx[(k, n - 1)] += -I * p.beta * uxx[k].conj();
                vx[(n - 1, k)] += I * p.beta * uxx[k];
            }
            let d: f64 = u.iter().zip(&ux).map(|(a, b)| 2.0 * (a.conj() * b).re).sum();
            vx[(n - 1, n - 1)] += -I * kap * d;

            let comm = &uu * &vv - &vv * &uu;
            worst = worst.max(frob(&(ut - vx + comm)));
        }
    }
    Ok(worst)
}
