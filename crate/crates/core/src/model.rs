//! The validated (Q, B) pair and its derived matrices.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::quadrature::{adaptive_vec, Tolerance};

/// Largest supported dimension; hot loops use fixed-size stack buffers.
pub const MAX_DIM: usize = 8;

/// Validated drift/diffusion pair with cached stationary covariance.
#[derive(Debug, Clone)]
pub struct Model {
    pub dim: usize,
    pub q: Mat,
    pub b: Mat,
    /// Stationary covariance, the solution of `B X + X B^T = -Q`.
    pub q_inf: Mat,
    pub q_inf_inv: Mat,
    pub log_det_q_inf: f64,
    pub trace_b: f64,
    q_inf_inv_sqrt: Mat,
    q_sqrt: Mat,
}

/// Validates `(q, b)` and solves for the stationary covariance.
pub fn build_model(q: Mat, b: Mat) -> Result<Model> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, B is {}x{}",
            q.nrows(),
            q.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if n > MAX_DIM {
        return Err(Error::Dimension(format!("dimension {n} exceeds the supported maximum {MAX_DIM}")));
    }
    if !linalg::is_finite(&q) || !linalg::is_finite(&b) {
        return Err(Error::NonFinite);
    }
    let asym = (&q - q.transpose()).norm() / q.norm().max(f64::MIN_POSITIVE);
    if asym > 1e-12 {
        return Err(Error::NonSymmetric(asym));
    }
    let q = linalg::symmetrize(&q);
    if q.clone().cholesky().is_none() {
        return Err(Error::NonPositiveDefinite);
    }
    let abscissa = linalg::spectral_abscissa(&b);
    if abscissa >= -1e-12 {
        return Err(Error::NonHurwitz(abscissa));
    }
    let q_inf = linalg::solve_lyapunov(&b, &q)?;
    let (log_det_q_inf, q_inf_inv) = linalg::spd_logdet_inverse(&q_inf).ok_or(Error::NonPositiveDefinite)?;
    let id_err = (&q_inf_inv * &q_inf - Mat::identity(n, n)).norm();
    if id_err > 1e-10 {
        return Err(Error::LyapunovResidual(id_err));
    }
    Ok(Model {
        dim: n,
        trace_b: b.trace(),
        q_inf_inv_sqrt: linalg::sym_inv_sqrt(&q_inf),
        q_sqrt: linalg::sym_sqrt(&q),
        q,
        b,
        q_inf,
        q_inf_inv,
        log_det_q_inf,
    })
}

impl Model {
    /// Named example models.
    pub fn preset(name: &str) -> Option<Model> {
        let (q, b) = match name {
            "salogni1d" => (Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, -1.0)),
            "isotropic2d" | "n2-isotropic" => (Mat::identity(2, 2), -Mat::identity(2, 2)),
            "nonnormal2d" | "n2-nonnormal" => (Mat::identity(2, 2), Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0])),
            "isotropic3d" => (Mat::identity(3, 3), -Mat::identity(3, 3)),
            _ => return None,
        };
        build_model(q, b).ok()
    }

    pub fn lyapunov_residual(&self) -> f64 {
        linalg::lyapunov_residual(&self.b, &self.q, &self.q_inf)
    }

    /// `e^{tB}`.
    pub fn exp_b(&self, t: f64) -> Result<Mat> {
        linalg::expm(&(&self.b * t))
    }

    /// Covariance `Q_t`, computed as `Q_inf - e^{tB} Q_inf e^{tB^T}` with the
    /// subtraction carried out through `e^{tB} - I` to keep small-t accuracy.
    pub fn cov_t(&self, t: f64) -> Result<Mat> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime(t));
        }
        let f = linalg::expm1(&(&self.b * t))?;
        let fq = &f * &self.q_inf;
        let m = &fq + fq.transpose() + &fq * f.transpose();
        Ok(-linalg::symmetrize(&m))
    }

    /// `Q_t` by adaptive quadrature of `s -> e^{sB} Q e^{sB^T}` on `[0, t]`.
    pub fn cov_t_oracle(&self, t: f64, tol: f64) -> Result<Mat> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime(t));
        }
        let n = self.dim;
        let integrand = |s: f64| -> Vec<f64> {
            let e = (&self.b * s).exp();
            let m = &e * &self.q * e.transpose();
            m.as_slice().to_vec()
        };
        let tol = Tolerance { abs: tol * 0.1 * self.q.norm(), rel: tol * 0.1, max_panels: 20_000 };
        let (v, _) = adaptive_vec(integrand, 0.0, t, n * n, tol)?;
        Ok(linalg::symmetrize(&Mat::from_column_slice(n, n, &v)))
    }

    /// `D_t = Q_inf e^{-tB^T} Q_inf^{-1}`, defined for either sign of `t`.
    pub fn d(&self, t: f64) -> Result<Mat> {
        let e = linalg::expm(&(self.b.transpose() * (-t)))?;
        Ok(&self.q_inf * e * &self.q_inf_inv)
    }

    /// `D_t - I`, accurate for small `|t|`.
    pub fn d_minus_identity(&self, t: f64) -> Result<Mat> {
        let e = linalg::expm1(&(self.b.transpose() * (-t)))?;
        Ok(&self.q_inf * e * &self.q_inf_inv)
    }

    /// `R(x) = x^T Q_inf^{-1} x / 2`.
    pub fn r(&self, x: &[f64]) -> f64 {
        0.5 * linalg::quad_form(self.q_inf_inv.as_slice(), self.dim, x)
    }

    /// `|x|_Q = |Q_inf^{-1/2} x|`.
    pub fn q_norm(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim];
        linalg::matvec(self.q_inf_inv_sqrt.as_slice(), self.dim, x, &mut y);
        linalg::norm(&y)
    }

    /// `d/ds R(D_s x)` at `s = 0`, i.e. `|Q^{1/2} Q_inf^{-1} x|^2 / 2`.
    pub fn r_velocity(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        linalg::matvec(self.q_inf_inv.as_slice(), n, x, &mut a);
        linalg::matvec(self.q_sqrt.as_slice(), n, &a, &mut b);
        0.5 * b.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn q_inf_inv_sqrt(&self) -> &Mat {
        &self.q_inf_inv_sqrt
    }

    pub fn q_sqrt(&self) -> &Mat {
        &self.q_sqrt
    }

    /// Whether `Q B^T = B Q`, the condition for the semigroup to be symmetric.
    pub fn is_symmetric_case(&self) -> bool {
        let l = &self.q * self.b.transpose();
        let r = &self.b * &self.q;
        (&l - &r).norm() <= 1e-12 * (l.norm() + r.norm()).max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m2(a: [f64; 4]) -> Mat {
        Mat::from_row_slice(2, 2, &a)
    }

    #[test]
    fn isotropic_stationary_covariance() {
        let m = build_model(Mat::identity(2, 2), -Mat::identity(2, 2)).unwrap();
        assert!((&m.q_inf - Mat::identity(2, 2) * 0.5).norm() < 1e-15);
        assert_eq!(m.trace_b, -2.0);
        assert_relative_eq!(m.r(&[1.0, 0.0]), 1.0, epsilon = 1e-15);
        assert_eq!(m.r(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = Mat::identity(2, 2);
        assert!(matches!(build_model(q.clone(), m2([0.1, 0.0, 0.0, -1.0])), Err(Error::NonHurwitz(_))));
        assert!(matches!(build_model(q.clone(), m2([0.0, 1.0, -1.0, 0.0])), Err(Error::NonHurwitz(_))));
        assert!(matches!(build_model(m2([1.0, 0.5, 0.0, 1.0]), -q.clone()), Err(Error::NonSymmetric(_))));
        assert!(matches!(build_model(m2([1.0, 2.0, 2.0, 1.0]), -q.clone()), Err(Error::NonPositiveDefinite)));
        assert!(matches!(build_model(q.clone(), Mat::identity(3, 3)), Err(Error::Dimension(_))));
        assert!(matches!(build_model(m2([f64::NAN, 0.0, 0.0, 1.0]), -q), Err(Error::NonFinite)));
    }

    #[test]
    fn nonnormal_model_against_quadrature() {
        let m = build_model(m2([2.0, 1.0, 1.0, 2.0]), m2([-1.0, 1.0, 0.0, -2.0])).unwrap();
        assert!(m.lyapunov_residual() < 1e-10);
        let oracle = m.cov_t_oracle(60.0, 1e-10).unwrap();
        assert!((&oracle - &m.q_inf).norm() < 1e-8 * m.q_inf.norm());
    }

    #[test]
    fn scalar_covariances() {
        let m = Model::preset("salogni1d").unwrap();
        assert_relative_eq!(m.cov_t(1.0).unwrap()[(0, 0)], 0.432_332_358_381_693_6, max_relative = 1e-14);
        assert_relative_eq!(m.cov_t_oracle(2.0, 1e-12).unwrap()[(0, 0)], 0.490_842_180_555_633_4, max_relative = 1e-10);
        assert!((m.cov_t(50.0).unwrap()[(0, 0)] - 0.5).abs() < 1e-10);
        assert_relative_eq!(m.cov_t(1e-3).unwrap()[(0, 0)] / 1e-3, 1.0, max_relative = 0.05);
        assert!(m.cov_t_oracle(0.0, 1e-8).unwrap().norm() == 0.0);
        assert!(matches!(m.cov_t(0.0), Err(Error::NonPositiveTime(_))));
    }

    #[test]
    fn flow_group() {
        let m = build_model(Mat::identity(2, 2), m2([-1.0, 5.0, 0.0, -1.0])).unwrap();
        assert!((m.d(0.0).unwrap() - Mat::identity(2, 2)).norm() < 1e-15);
        let lhs = m.d(0.3).unwrap() * m.d(-1.7).unwrap();
        assert!((lhs - m.d(-1.4).unwrap()).norm() < 1e-10);
        let s = Model::preset("salogni1d").unwrap();
        assert_relative_eq!(s.d(0.7).unwrap()[(0, 0)], 0.7f64.exp(), max_relative = 1e-14);
        let e = m.d_minus_identity(1e-6).unwrap() - (m.d(1e-6).unwrap() - Mat::identity(2, 2));
        assert!(e.norm() < 1e-14);
    }

    #[test]
    fn velocity_matches_finite_difference() {
        let m = Model::preset("nonnormal2d").unwrap();
        let x = [0.4, -1.1];
        let h = 1e-5;
        let rx = |s: f64| {
            let d = m.d(s).unwrap();
            let y = &d * crate::linalg::Vector::from_column_slice(&x);
            m.r(y.as_slice())
        };
        let fd = (rx(h) - rx(-h)) / (2.0 * h);
        assert_relative_eq!(fd, m.r_velocity(&x), max_relative = 1e-7);
    }

    #[test]
    fn symmetric_case_detection() {
        assert!(Model::preset("isotropic2d").unwrap().is_symmetric_case());
        assert!(!Model::preset("nonnormal2d").unwrap().is_symmetric_case());
    }
}
