//! Small dense complex linear algebra shared by the modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Condition numbers above this are treated as singular.
pub const COND_CEILING: f64 = 1e12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Bilinear pairing sum_k a_k b_k (no conjugation).
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 2-norm condition number from the singular values. Zero matrices give infinity.
pub fn cond2(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a * x = b` by LU; returns `None` if the factorization is singular.
pub fn lu_solve(a: &CMat, b: &CMat) -> Option<CMat> {
    a.clone().lu().solve(b)
}

/// Determinant by literal cofactor expansion along the first row.
/// Exponential cost; meant only as a reference for tiny matrices.
pub fn laplace_det(m: &CMat) -> C64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "laplace_det needs a square matrix");
    match n {
        0 => C64::new(1.0, 0.0),
        1 => m[(0, 0)],
        _ => {
            let mut acc = C64::new(0.0, 0.0);
            for col in 0..n {
                let minor = m.clone().remove_row(0).remove_column(col);
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                acc += m[(0, col)] * sign * laplace_det(&minor);
            }
            acc
        }
    }
}

/// Diagonal matrix from real entries.
pub fn real_diag(d: &[f64]) -> CMat {
    CMat::from_fn(d.len(), d.len(), |i, j| {
        if i == j {
            C64::new(d[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_matches_lu_determinant() {
        let m = CMat::from_fn(4, 4, |i, j| c((i * 3 + j) as f64 * 0.37 - 1.0, (i as f64 - j as f64).sin()));
        let d1 = laplace_det(&m);
        let d2 = m.clone().determinant();
        assert!((d1 - d2).norm() < 1e-12 * d2.norm().max(1.0));
    }

    #[test]
    fn cond_of_identity_is_one() {
        let id = CMat::identity(3, 3);
        assert!((cond2(&id) - 1.0).abs() < 1e-14);
        assert!(cond2(&CMat::zeros(2, 2)).is_infinite());
    }
}
