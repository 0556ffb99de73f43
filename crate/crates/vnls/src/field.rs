//! Field closures and sampled space-time grids.

use crate::error::{Error, Result};
use crate::linalg::C64;

/// A pure map (x, t) -> C^{N-1}.
pub trait FieldClosure: Sync {
    fn n_comp(&self) -> usize;

    fn eval(&self, x: f64, t: f64) -> Result<Vec<C64>>;

    /// Spatial derivative. The default is a 4th-order central difference with h = 1e-3.
    fn eval_dx(&self, x: f64, t: f64) -> Result<Vec<C64>> {
        let h = 1e-3;
        let m2 = self.eval(x - 2.0 * h, t)?;
        let m1 = self.eval(x - h, t)?;
        let p1 = self.eval(x + h, t)?;
        let p2 = self.eval(x + 2.0 * h, t)?;
        Ok((0..self.n_comp())
            .map(|k| (m2[k] - 8.0 * m1[k] + 8.0 * p1[k] - p2[k]) / (12.0 * h))
            .collect())
    }
}

/// Wraps a plain closure.
pub struct FnField<F> {
    ncomp: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, f64) -> Vec<C64> + Sync,
{
    pub fn new(ncomp: usize, f: F) -> Self {
        Self { ncomp, f }
    }
}

impl<F> FieldClosure for FnField<F>
where
    F: Fn(f64, f64) -> Vec<C64> + Sync,
{
    fn n_comp(&self) -> usize {
        self.ncomp
    }

    fn eval(&self, x: f64, t: f64) -> Result<Vec<C64>> {
        let v = (self.f)(x, t);
        if v.len() != self.ncomp {
            return Err(Error::InvalidParams(format!(
                "closure returned {} components, expected {}",
                v.len(),
                self.ncomp
            )));
        }
        Ok(v)
    }
}

/// The identically zero field.
pub struct Vacuum {
    pub ncomp: usize,
}

impl FieldClosure for Vacuum {
    fn n_comp(&self) -> usize {
        self.ncomp
    }
    fn eval(&self, _x: f64, _t: f64) -> Result<Vec<C64>> {
        Ok(vec![C64::new(0.0, 0.0); self.ncomp])
    }
    fn eval_dx(&self, _x: f64, _t: f64) -> Result<Vec<C64>> {
        Ok(vec![C64::new(0.0, 0.0); self.ncomp])
    }
}

/// Evaluates the closure twice at each sample point and reports whether the results agree bitwise.
pub fn check_purity(f: &dyn FieldClosure, points: &[(f64, f64)]) -> Result<bool> {
    for &(x, t) in points {
        let a = f.eval(x, t)?;
        let b = f.eval(x, t)?;
        if a.iter().zip(&b).any(|(p, q)| p.re.to_bits() != q.re.to_bits() || p.im.to_bits() != q.im.to_bits()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Rectangular grid geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
}

impl GridSpec {
    /// Grid covering [xmin, xmax] x [tmin, tmax] with the given steps (end points included, rounded).
    pub fn from_ranges(xmin: f64, xmax: f64, dx: f64, tmin: f64, tmax: f64, dt: f64) -> Result<Self> {
        if !(dx > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParams("dx and dt must be positive".into()));
        }
        if !(xmax >= xmin) || !(tmax >= tmin) {
            return Err(Error::InvalidParams("empty grid range".into()));
        }
        let nx = ((xmax - xmin) / dx).round() as usize + 1;
        let nt = ((tmax - tmin) / dt).round() as usize + 1;
        Ok(Self { x0: xmin, dx, nx, t0: tmin, dt, nt })
    }

    /// Three time rows centred on `t`.
    pub fn centred_in_time(xmin: f64, xmax: f64, dx: f64, t: f64, dt: f64) -> Result<Self> {
        let mut g = Self::from_ranges(xmin, xmax, dx, t - dt, t + dt, dt)?;
        g.nt = 3;
        g.t0 = t - dt;
        Ok(g)
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    pub fn t(&self, it: usize) -> f64 {
        self.t0 + it as f64 * self.dt
    }
}

/// Sampled field u(x, t) with values stored row-major as [it][ix][component].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
    pub ncomp: usize,
    pub values: Vec<C64>,
}

impl FieldGrid {
    pub fn zeros(spec: GridSpec, ncomp: usize) -> Self {
        Self {
            x0: spec.x0,
            dx: spec.dx,
            nx: spec.nx,
            t0: spec.t0,
            dt: spec.dt,
            nt: spec.nt,
            ncomp,
            values: vec![C64::new(0.0, 0.0); spec.nx * spec.nt * ncomp],
        }
    }

    pub fn sample(f: &dyn FieldClosure, spec: GridSpec) -> Result<Self> {
        let mut g = Self::zeros(spec, f.n_comp());
        for it in 0..spec.nt {
            for ix in 0..spec.nx {
                let v = f.eval(spec.x(ix), spec.t(it))?;
                if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::NonFinite(format!("field at x = {}, t = {}", spec.x(ix), spec.t(it))));
                }
                g.at_mut(it, ix).copy_from_slice(&v);
            }
        }
        Ok(g)
    }

    pub fn from_fn(spec: GridSpec, ncomp: usize, f: impl Fn(f64, f64) -> Vec<C64>) -> Self {
        let mut g = Self::zeros(spec, ncomp);
        for it in 0..spec.nt {
            for ix in 0..spec.nx {
                let v = f(spec.x(ix), spec.t(it));
                g.at_mut(it, ix).copy_from_slice(&v);
            }
        }
        g
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { x0: self.x0, dx: self.dx, nx: self.nx, t0: self.t0, dt: self.dt, nt: self.nt }
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    pub fn t(&self, it: usize) -> f64 {
        self.t0 + it as f64 * self.dt
    }

    pub fn at(&self, it: usize, ix: usize) -> &[C64] {
        let o = (it * self.nx + ix) * self.ncomp;
        &self.values[o..o + self.ncomp]
    }

    pub fn at_mut(&mut self, it: usize, ix: usize) -> &mut [C64] {
        let o = (it * self.nx + ix) * self.ncomp;
        &mut self.values[o..o + self.ncomp]
    }

    /// Checks the stencil requirements (nx >= 5, nt >= 3) and positive steps.
    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParams("dx and dt must be positive".into()));
        }
        if self.nx < 5 || self.nt < 3 {
            return Err(Error::GridTooSmall { nx: self.nx, nt: self.nt, min_nx: 5, min_nt: 3 });
        }
        Ok(())
    }

    pub fn congruent(&self, other: &FieldGrid) -> bool {
        self.spec() == other.spec() && self.ncomp == other.ncomp
    }

    /// Largest |u| over the time row `it`, with the x where it occurs.
    pub fn row_peak(&self, it: usize) -> (f64, f64) {
        let mut best = (0.0, self.x0);
        for ix in 0..self.nx {
            let m = crate::linalg::vec_norm(self.at(it, ix));
            if m > best.0 {
                best = (m, self.x(ix));
            }
        }
        best
    }
}

/// Stencils shared by the residual checks.
pub(crate) mod stencil {
    use crate::linalg::C64;

    pub fn d1_4(m2: C64, m1: C64, p1: C64, p2: C64, h: f64) -> C64 {
        (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h)
    }

    pub fn d2_4(m2: C64, m1: C64, z: C64, p1: C64, p2: C64, h: f64) -> C64 {
        (-m2 + 16.0 * m1 - 30.0 * z + 16.0 * p1 - p2) / (12.0 * h * h)
    }

    pub fn d1_2(m1: C64, p1: C64, h: f64) -> C64 {
        (p1 - m1) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_ranges_counts_endpoints() {
        let g = GridSpec::from_ranges(-1.0, 1.0, 0.5, 0.0, 1.0, 0.25).unwrap();
        assert_eq!(g.nx, 5);
        assert_eq!(g.nt, 5);
        assert_eq!(g.x(4), 1.0);
    }

    #[test]
    fn validate_rejects_small_grids() {
        let g = FieldGrid::zeros(GridSpec { x0: 0.0, dx: 0.1, nx: 4, t0: 0.0, dt: 0.1, nt: 3 }, 1);
        assert!(matches!(g.validate(), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn closures_are_pure() {
        let f = FnField::new(1, |x: f64, t: f64| vec![C64::new(x.sin(), t)]);
        assert!(check_purity(&f, &[(0.1, 0.2), (3.0, -1.0)]).unwrap());
    }

    #[test]
    fn default_dx_is_accurate() {
        let f = FnField::new(1, |x: f64, _t: f64| vec![C64::new(x.sin(), 0.0)]);
        let d = f.eval_dx(0.4, 0.0).unwrap();
        assert!((d[0].re - 0.4f64.cos()).abs() < 1e-11);
    }
}
