//! Dense linear algebra helpers on small matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Matrix exponential. Returns `Overflow` when the result is not finite.
pub fn expm(m: &Mat) -> Result<Mat> {
    if !is_finite(m) {
        return Err(Error::NonFinite);
    }
    let e = m.clone().exp();
    if is_finite(&e) {
        Ok(e)
    } else {
        Err(Error::Overflow)
    }
}

/// `exp(m) - I`, accurate when `m` is small.
pub fn expm1(m: &Mat) -> Result<Mat> {
    if !is_finite(m) {
        return Err(Error::NonFinite);
    }
    let n = m.nrows();
    if m.norm() > 0.25 {
        return Ok(expm(m)? - Mat::identity(n, n));
    }
    let mut term = m.clone();
    let mut sum = m.clone();
    for k in 2..40 {
        term = &term * m / k as f64;
        sum += &term;
        if term.norm() <= 1e-18 * sum.norm() {
            break;
        }
    }
    Ok(sum)
}

/// Solves `A X + X A^T + Q = 0` by complex Schur decomposition of `A`.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("Lyapunov operands must be square and equal size".into()));
    }
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let qc = q.map(|v| Complex64::new(v, 0.0));
    let schur = Schur::try_new(ac, 1e-15, 10_000).ok_or(Error::LyapunovResidual(f64::INFINITY))?;
    let (u, t) = schur.unpack();
    let c = -(u.adjoint() * qc * &u);
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs: Vec<Complex64> = (0..n).map(|i| c[(i, j)]).collect();
        for k in j + 1..n {
            let f = t[(j, k)].conj();
            for i in 0..n {
                rhs[i] -= f * y[(i, k)];
            }
        }
        let shift = t[(j, j)].conj();
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..n {
                s -= t[(i, k)] * y[(k, j)];
            }
            let d = t[(i, i)] + shift;
            if d.norm() == 0.0 {
                return Err(Error::LyapunovResidual(f64::INFINITY));
            }
            y[(i, j)] = s / d;
        }
    }
    let x = (&u * y * u.adjoint()).map(|z| z.re);
    let x = symmetrize(&x);
    let res = lyapunov_residual(a, q, &x);
    if !res.is_finite() || res > 1e-10 {
        return Err(Error::LyapunovResidual(res));
    }
    Ok(x)
}

/// `||A X + X A^T + Q||_F / ||Q||_F`.
pub fn lyapunov_residual(a: &Mat, q: &Mat, x: &Mat) -> f64 {
    (a * x + x * a.transpose() + q).norm() / q.norm()
}

/// Symmetric matrix function via eigendecomposition.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let e = symmetrize(m).symmetric_eigen();
    let d = Mat::from_diagonal(&e.eigenvalues.map(f));
    symmetrize(&(&e.eigenvectors * d * e.eigenvectors.transpose()))
}

pub fn sym_sqrt(m: &Mat) -> Mat {
    sym_apply(m, |v| v.max(0.0).sqrt())
}

pub fn sym_inv_sqrt(m: &Mat) -> Mat {
    sym_apply(m, |v| 1.0 / v.sqrt())
}

pub fn sym_eigen_range(m: &Mat) -> (f64, f64) {
    let e = symmetrize(m).symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Log-determinant and inverse of a symmetric positive definite matrix.
pub fn spd_logdet_inverse(m: &Mat) -> Option<(f64, Mat)> {
    let ch = symmetrize(m).cholesky()?;
    let l = ch.l();
    let mut logdet = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        logdet += 2.0 * d.ln();
    }
    Some((logdet, symmetrize(&ch.inverse())))
}

/// Kronecker-product solve of the Lyapunov equation, used as an oracle.
pub fn solve_lyapunov_kron(a: &Mat, q: &Mat) -> Option<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let k = id.kronecker(a) + a.kronecker(&id);
    let rhs = Vector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = k.lu().solve(&rhs)?;
    Some(Mat::from_column_slice(n, n, sol.as_slice()))
}

/// `out = m x` for column-major `m` of size `n x n`.
#[inline]
pub fn matvec(m: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += m[i + j * n] * x[j];
        }
        out[i] = s;
    }
}

/// `v^T m v` for column-major symmetric `m`.
#[inline]
pub fn quad_form(m: &[f64], n: usize, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..n {
        let mut r = 0.0;
        for i in 0..n {
            r += m[i + j * n] * v[i];
        }
        s += r * v[j];
    }
    s
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_matches_kronecker_oracle() {
        let a = Mat::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, -0.3, -2.0, 1.0, 0.0, -1.5, -0.7]);
        let q = Mat::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let x = solve_lyapunov(&a, &q).unwrap();
        let o = solve_lyapunov_kron(&a, &q).unwrap();
        assert!((&x - &o).norm() < 1e-12 * o.norm());
        assert!(lyapunov_residual(&a, &q, &x) < 1e-13);
    }

    #[test]
    fn lyapunov_scalar() {
        let x = solve_lyapunov(&Mat::from_element(1, 1, -1.0), &Mat::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn expm1_small_argument() {
        let m = Mat::from_row_slice(2, 2, &[1e-9, 2e-9, 0.0, -1e-9]);
        let e = expm1(&m).unwrap();
        assert_relative_eq!(e[(0, 0)], (1e-9f64).exp_m1(), max_relative = 1e-12);
        assert_relative_eq!(e[(0, 1)], 2e-9, max_relative = 1e-8);
    }

    #[test]
    fn expm_overflow_is_reported() {
        let m = Mat::from_element(1, 1, 1000.0);
        assert_eq!(expm(&m), Err(Error::Overflow));
    }

    #[test]
    fn sqrt_roundtrip() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt(&m);
        assert!((&s * &s - &m).norm() < 1e-14);
        let r = sym_inv_sqrt(&m);
        assert!((&r * &m * &r - Mat::identity(2, 2)).norm() < 1e-14);
    }
}
