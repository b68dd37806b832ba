//! Gaussian densities and the four transition kernels, in log domain.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Model, MAX_DIM};
use crate::par;
use crate::quadrature::{Estimate, TensorRule};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Natural logarithm of a positive density value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogDensity(pub f64);

impl LogDensity {
    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }
}

/// Log density of the invariant Gaussian measure.
pub fn log_gamma_inf(model: &Model, x: &[f64]) -> LogDensity {
    let n = model.dim as f64;
    LogDensity(-0.5 * n * (2.0 * PI).ln() - 0.5 * model.log_det_q_inf - model.r(x))
}

/// Log density of the inverse Gaussian measure.
pub fn log_gamma_minus_inf(model: &Model, x: &[f64]) -> LogDensity {
    let n = model.dim as f64;
    LogDensity(0.5 * n * (2.0 * PI).ln() + 0.5 * model.log_det_q_inf + model.r(x))
}

/// Everything about the kernels that depends on `t` only.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: f64,
    pub dim: usize,
    pub q_t: Mat,
    pub log_det_q_t: f64,
    pub q_t_inv: Mat,
    /// `D_t` and `D_{-t}`.
    pub d_t: Mat,
    pub d_minus_t: Mat,
    /// `Q_t^{-1} - Q_inf^{-1}`.
    pub p_t: Mat,
    /// `D_t^T P_t D_t = Q_inf^{-1} + e^{tB^T} Q_t^{-1} e^{tB}`, the form of both
    /// kernels in the pulled-back variable `D_{-t} a - b`.
    pub pulled_form: Mat,
    pub exp_tb: Mat,
    pub exp_minus_tb: Mat,
    /// Covariance of `u -> M_t^{UO}(x, u)`, centred at `e^{-tB} x`.
    pub sigma_t: Mat,
    log_norm_ou: f64,
    log_norm_uo: f64,
    log_norm_leb: f64,
    q_inf_inv: Mat,
}

impl TimeSlice {
    pub fn new(model: &Model, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime(t));
        }
        if t < 1e-14 {
            return Err(Error::SingularCovariance(t));
        }
        let n = model.dim;
        let q_t = model.cov_t(t)?;
        let (log_det_q_t, q_t_inv) = linalg::spd_logdet_inverse(&q_t).ok_or(Error::SingularCovariance(t))?;
        let exp_tb = model.exp_b(t)?;
        let exp_minus_tb = model.exp_b(-t)?;
        // Q_t^{-1} - Q_inf^{-1} = Q_t^{-1} (e^{tB} Q_inf e^{tB^T}) Q_inf^{-1}, free of cancellation at large t.
        let tail = &exp_tb * &model.q_inf * exp_tb.transpose();
        let p_t = linalg::symmetrize(&(&q_t_inv * tail * &model.q_inf_inv));
        let pulled_form = linalg::symmetrize(&(&model.q_inf_inv + exp_tb.transpose() * &q_t_inv * &exp_tb));
        let sigma_t = linalg::symmetrize(&(&exp_minus_tb * &q_t * exp_minus_tb.transpose()));
        let nf = n as f64;
        let l2pi = (2.0 * PI).ln();
        Ok(TimeSlice {
            t,
            dim: n,
            log_det_q_t,
            q_t_inv,
            d_t: model.d(t)?,
            d_minus_t: model.d(-t)?,
            p_t,
            pulled_form,
            exp_tb,
            exp_minus_tb,
            sigma_t,
            log_norm_ou: 0.5 * (model.log_det_q_inf - log_det_q_t),
            log_norm_uo: -nf * l2pi - 0.5 * (model.log_det_q_inf + log_det_q_t) + t * model.trace_b,
            log_norm_leb: -0.5 * nf * l2pi - 0.5 * log_det_q_t + t * model.trace_b,
            q_inf_inv: model.q_inf_inv.clone(),
            q_t,
        })
    }

    fn r(&self, x: &[f64]) -> f64 {
        0.5 * linalg::quad_form(self.q_inf_inv.as_slice(), self.dim, x)
    }

    /// `(a - D_t b)^T P_t (a - D_t b)`, evaluated as a form in `D_{-t} a - b` so that
    /// the growth of `D_t` never enters.
    #[inline]
    fn residual_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.dim;
        let mut v = [0.0; MAX_DIM];
        linalg::matvec(self.d_minus_t.as_slice(), n, a, &mut v[..n]);
        for i in 0..n {
            v[i] -= b[i];
        }
        linalg::quad_form(self.pulled_form.as_slice(), n, &v[..n])
    }

    /// Mehler kernel `K_t^{OU}(x, u)` with respect to the invariant measure.
    pub fn log_kernel_ou(&self, x: &[f64], u: &[f64]) -> f64 {
        self.log_norm_ou + self.r(x) - 0.5 * self.residual_form(u, x)
    }

    /// `K_t^{UO}(x, u)` with respect to the inverse Gaussian measure.
    pub fn log_kernel_uo(&self, x: &[f64], u: &[f64]) -> f64 {
        self.log_norm_uo - self.r(x) - 0.5 * self.residual_form(x, u)
    }

    /// `M_t^{UO}(x, u)` with respect to Lebesgue measure, evaluated as
    /// `e^{t tr B} N(e^{tB} u, Q_t)(x)`.
    ///
    /// This form avoids the cancellation between `R(u)` and the quadratic
    /// term of `K_t^{UO}` when `u` is far out.
    pub fn log_kernel_uo_lebesgue(&self, x: &[f64], u: &[f64]) -> f64 {
        let n = self.dim;
        let mut v = [0.0; MAX_DIM];
        linalg::matvec(self.exp_tb.as_slice(), n, u, &mut v[..n]);
        for i in 0..n {
            v[i] = x[i] - v[i];
        }
        let q = linalg::quad_form(self.q_t_inv.as_slice(), n, &v[..n]);
        self.log_norm_leb - 0.5 * q
    }

    /// `e^{-tB} x`, the mean of `u -> M_t^{UO}(x, u)`.
    pub fn uo_mean(&self, x: &[f64], out: &mut [f64]) {
        linalg::matvec(self.exp_minus_tb.as_slice(), self.dim, x, out);
    }
}

pub fn log_kernel_ou(model: &Model, t: f64, x: &[f64], u: &[f64]) -> Result<LogDensity> {
    Ok(LogDensity(TimeSlice::new(model, t)?.log_kernel_ou(x, u)))
}

pub fn log_kernel_uo(model: &Model, t: f64, x: &[f64], u: &[f64]) -> Result<LogDensity> {
    Ok(LogDensity(TimeSlice::new(model, t)?.log_kernel_uo(x, u)))
}

pub fn log_kernel_uo_lebesgue(model: &Model, t: f64, x: &[f64], u: &[f64]) -> Result<LogDensity> {
    Ok(LogDensity(TimeSlice::new(model, t)?.log_kernel_uo_lebesgue(x, u)))
}

/// Proposal covariance inflation for the mass integrals.
const PROPOSAL_INFLATION: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassMethod {
    /// Tensor Gauss-Hermite rule with the given nodes per axis.
    Hermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl MassMethod {
    /// Hermite rule with 64 nodes up to `n = 2`, Monte Carlo with `10^6` draws above.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        if dim <= 2 {
            MassMethod::Hermite { nodes: 64 }
        } else {
            MassMethod::MonteCarlo { samples: 1_000_000, seed }
        }
    }
}

/// Gaussian importance proposal adapted to `u -> M_t^{UO}(x, u)`.
struct Proposal {
    mean: Vec<f64>,
    chol: Mat,
    log_norm: f64,
}

impl Proposal {
    fn new(slice: &TimeSlice, x: &[f64]) -> Result<Self> {
        let n = slice.dim;
        let mut mean = vec![0.0; n];
        slice.uo_mean(x, &mut mean);
        let cov = &slice.sigma_t * PROPOSAL_INFLATION;
        let chol = cov.cholesky().ok_or(Error::SingularCovariance(slice.t))?.l();
        let log_det_l: f64 = (0..n).map(|i| chol[(i, i)].ln()).sum();
        Ok(Proposal { mean, chol, log_norm: 0.5 * n as f64 * (2.0 * PI).ln() + log_det_l })
    }

    /// Maps a standard normal `z` to `u` and returns `-log phi(u)`.
    fn map(&self, z: &[f64], u: &mut [f64]) -> f64 {
        let n = self.mean.len();
        linalg::matvec(self.chol.as_slice(), n, z, u);
        for i in 0..n {
            u[i] += self.mean[i];
        }
        self.log_norm + 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Total mass `int K_t^{UO}(x, u) d gamma_{-inf}(u)`, which equals 1.
pub fn kernel_mass(model: &Model, t: f64, x: &[f64], method: MassMethod) -> Result<Estimate> {
    let slice = TimeSlice::new(model, t)?;
    kernel_mass_with(&slice, x, method, None)
}

/// As [`kernel_mass`], reusing a time slice and optionally a prebuilt rule.
pub fn kernel_mass_with(slice: &TimeSlice, x: &[f64], method: MassMethod, rule: Option<&TensorRule>) -> Result<Estimate> {
    let n = slice.dim;
    let prop = Proposal::new(slice, x)?;
    let eval = |z: &[f64]| {
        let mut u = [0.0; MAX_DIM];
        let lw = prop.map(z, &mut u[..n]);
        (slice.log_kernel_uo_lebesgue(x, &u[..n]) + lw).exp()
    };
    match method {
        MassMethod::Hermite { nodes } => {
            let owned;
            let rule = match rule {
                Some(r) => r,
                None => {
                    owned = TensorRule::standard_normal(n, nodes);
                    &owned
                }
            };
            let mut s = 0.0;
            for k in 0..rule.len() {
                s += rule.weights[k] * eval(rule.point(k));
            }
            Ok(Estimate { value: s, error: 1e-14 * rule.len() as f64 })
        }
        MassMethod::MonteCarlo { samples, seed } => {
            let parts = par::mc_chunks(seed, samples, |rng, count| {
                let mut z = [0.0; MAX_DIM];
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..count {
                    for v in z.iter_mut().take(n) {
                        *v = StandardNormal.sample(rng);
                    }
                    let w = eval(&z[..n]);
                    s += w;
                    s2 += w * w;
                }
                (s, s2)
            });
            let (s, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let m = s / samples as f64;
            let var = (s2 / samples as f64 - m * m).max(0.0);
            Ok(Estimate { value: m, error: (var / samples as f64).sqrt() })
        }
    }
}

/// Fitted two-sided Gaussian envelope of `K_t^{UO}` on one time regime.
///
/// With `r` the log kernel minus the regime's base term and `y` the negative
/// scaled squared distance, every sample satisfies
/// `ln(min_ratio) + c_upper * y <= r <= ln(max_ratio) + c_lower * y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundFitReport {
    pub t_range: (f64, f64),
    pub c_lower: f64,
    pub c_upper: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Least-squares slope of `r` against `y` and the half-width of its residual band.
    pub slope: f64,
    pub residual_band: f64,
    /// Largest violation of the envelope inequalities over the samples.
    pub max_violation: f64,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRegime {
    /// `t <= 1`: base `-R(x) - (n/2) ln t`, distance scaled by `1/t`.
    Small,
    /// `t >= 1`: base `-|tr B| t - R(x)`.
    Large,
}

#[derive(Debug, Clone)]
pub struct BoundSampler {
    pub ball_radius: f64,
    pub samples_per_t: usize,
}

impl Default for BoundSampler {
    fn default() -> Self {
        BoundSampler { ball_radius: 4.0, samples_per_t: 200 }
    }
}

pub fn small_t_grid() -> Vec<f64> {
    (0..=30).map(|k| 10f64.powf(-3.0 + 0.1 * k as f64)).collect()
}

pub fn large_t_grid() -> Vec<f64> {
    (0..=19).map(|k| 1.0 + k as f64).collect()
}

/// Uniform draw from the ball of radius `r` in `n` dimensions.
pub fn uniform_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let dir = crate::growth::random_unit(rng, n);
    let rad = r * rng.random::<f64>().powf(1.0 / n as f64);
    dir.iter().map(|v| v * rad).collect()
}

/// Fits the small-time and large-time envelopes.
pub fn fit_kernel_bounds(
    model: &Model,
    small_grid: &[f64],
    large_grid: &[f64],
    sampler: &BoundSampler,
    seed: u64,
) -> Result<(BoundFitReport, BoundFitReport)> {
    if small_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidArgument("small-time grid must lie in (0, 1]".into()));
    }
    if large_grid.iter().any(|&t| !(1.0..=20.0).contains(&t)) {
        return Err(Error::InvalidArgument("large-time grid must lie in [1, 20]".into()));
    }
    let small = fit_regime(model, small_grid, TimeRegime::Small, sampler, seed)?;
    let large = fit_regime(model, large_grid, TimeRegime::Large, sampler, seed.wrapping_add(1))?;
    Ok((small, large))
}

struct Sample {
    a: f64,
    y: f64,
    r: f64,
}

pub fn fit_regime(model: &Model, grid: &[f64], regime: TimeRegime, sampler: &BoundSampler, seed: u64) -> Result<BoundFitReport> {
    let n = model.dim;
    let per_t = par::try_map_indexed(grid.len(), |i| -> Result<Vec<Sample>> {
        let t = grid[i];
        let slice = TimeSlice::new(model, t)?;
        let mut rng = par::stream_rng(seed, i as u64);
        let scale = match regime {
            TimeRegime::Small => t.sqrt(),
            TimeRegime::Large => 1.0,
        };
        let mut out = Vec::with_capacity(sampler.samples_per_t);
        for _ in 0..sampler.samples_per_t {
            let x = uniform_ball(&mut rng, n, sampler.ball_radius);
            let mut centre = vec![0.0; n];
            linalg::matvec(slice.d_minus_t.as_slice(), n, &x, &mut centre);
            let u: Vec<f64> = centre.iter().map(|c| { let g: f64 = StandardNormal.sample(&mut rng); c + scale * g }).collect();
            let base = match regime {
                TimeRegime::Small => -model.r(&x) - 0.5 * n as f64 * t.ln(),
                TimeRegime::Large => -model.trace_b.abs() * t - model.r(&x),
            };
            let w2: f64 = centre.iter().zip(&u).map(|(c, v)| (c - v) * (c - v)).sum();
            let y = match regime {
                TimeRegime::Small => -w2 / t,
                TimeRegime::Large => -w2,
            };
            // Intercept at zero distance, evaluated from the kernel itself.
            let a = slice.log_kernel_uo(&x, &centre) - base;
            let r = slice.log_kernel_uo(&x, &u) - base;
            out.push(Sample { a, y, r });
        }
        Ok(out)
    })?;
    let samples: Vec<Sample> = per_t.into_iter().flatten().collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if samples.is_empty() || ymax - ymin <= 1e-12 * ymin.abs().max(1.0) {
        return Err(Error::DegenerateSample("all sampled distances are equal".into()));
    }
    let (mut c_lower, mut c_upper) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut a_min, mut a_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &samples {
        a_min = a_min.min(s.a);
        a_max = a_max.max(s.a);
        if s.y < -1e-6 {
            let k = (s.r - s.a) / s.y;
            c_lower = c_lower.min(k);
            c_upper = c_upper.max(k);
        }
    }
    if !c_lower.is_finite() || !(c_lower > 0.0) || !c_upper.is_finite() {
        return Err(Error::DegenerateSample("no usable slope estimates".into()));
    }
    let mut max_violation = 0.0f64;
    for s in &samples {
        max_violation = max_violation.max(a_min + c_upper * s.y - s.r);
        max_violation = max_violation.max(s.r - (a_max + c_lower * s.y));
    }
    let m = samples.len() as f64;
    let ym = ys.iter().sum::<f64>() / m;
    let rm = samples.iter().map(|s| s.r).sum::<f64>() / m;
    let sxy: f64 = samples.iter().map(|s| (s.y - ym) * (s.r - rm)).sum();
    let sxx: f64 = samples.iter().map(|s| (s.y - ym) * (s.y - ym)).sum();
    let slope = sxy / sxx;
    let residual_band = samples.iter().map(|s| (s.r - rm - slope * (s.y - ym)).abs()).fold(0.0, f64::max);
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundFitReport {
        t_range: (lo, hi),
        c_lower,
        c_upper,
        min_ratio: a_min.exp(),
        max_ratio: a_max.exp(),
        slope,
        residual_band,
        max_violation,
        sample_count: samples.len(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn salogni() -> Model {
        Model::preset("salogni1d").unwrap()
    }

    #[test]
    fn gaussian_densities() {
        let m = salogni();
        assert_relative_eq!(log_gamma_inf(&m, &[0.0]).ln(), -0.5 * PI.ln(), epsilon = 1e-15);
        assert_relative_eq!(log_gamma_minus_inf(&m, &[0.7]).ln(), 0.5 * PI.ln() + 0.49, epsilon = 1e-14);
        let iso = Model::preset("isotropic2d").unwrap();
        assert_relative_eq!(log_gamma_minus_inf(&iso, &[0.0, 0.0]).ln(), PI.ln(), epsilon = 1e-14);
        let g5 = log_gamma_minus_inf(&iso, &[5.0, 0.0]).ln();
        let g4 = log_gamma_minus_inf(&iso, &[4.0, 0.0]).ln();
        assert!(g5 - g4 >= 9.0 * 2.0 / 2.0 - 1e-12);
    }

    #[test]
    fn invariant_density_integrates_to_one() {
        let m = Model::preset("nonnormal2d").unwrap();
        let rule = TensorRule::composite_box(&[-7.0, -7.0], &[7.0, 7.0], 14, 8);
        let s: f64 = (0..rule.len()).map(|k| rule.weights[k] * log_gamma_inf(&m, rule.point(k)).value()).sum();
        assert!((s - 1.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn scalar_kernel_values() {
        let m = salogni();
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(log_kernel_ou(&m, 1.0, &[0.0], &[0.0]).unwrap().ln(), -0.5 * (1.0 - e2).ln(), epsilon = 1e-14);
        let uo = log_kernel_uo(&m, 1.0, &[0.0], &[0.0]).unwrap().value();
        assert_relative_eq!(uo, (-1.0f64).exp() / (PI * (1.0 - e2).sqrt()), max_relative = 1e-13);
        assert_relative_eq!(uo, 0.125931, max_relative = 1e-5);
    }

    #[test]
    fn lebesgue_kernel_two_paths() {
        let m = salogni();
        let s = TimeSlice::new(&m, 1.0).unwrap();
        let a = s.log_kernel_uo_lebesgue(&[0.0], &[0.0]);
        let b = s.log_kernel_uo(&[0.0], &[0.0]) + log_gamma_minus_inf(&m, &[0.0]).ln();
        assert!((a - b).abs() < 1e-12);
        assert_relative_eq!(a, -0.5 * (2.0 * PI * s.q_t[(0, 0)]).ln() - 1.0, epsilon = 1e-13);
    }

    #[test]
    fn singular_time_rejected() {
        let m = salogni();
        assert!(matches!(TimeSlice::new(&m, 1e-15), Err(Error::SingularCovariance(_))));
        assert!(matches!(TimeSlice::new(&m, -1.0), Err(Error::NonPositiveTime(_))));
    }

    #[test]
    fn mass_is_one() {
        for name in ["salogni1d", "nonnormal2d"] {
            let m = Model::preset(name).unwrap();
            let x = vec![1.5; m.dim];
            for t in [0.1, 1.0, 5.0] {
                let e = kernel_mass(&m, t, &x, MassMethod::Hermite { nodes: 64 }).unwrap();
                assert!((e.value - 1.0).abs() < 1e-10, "{name} {t} {e:?}");
            }
        }
    }

    #[test]
    fn scalar_bound_fit_brackets_exact_coefficient() {
        let m = salogni();
        let grid = small_t_grid();
        let (small, large) = fit_kernel_bounds(&m, &grid, &large_t_grid(), &BoundSampler::default(), 5).unwrap();
        for &t in &grid {
            let k = t / (1.0 - (-2.0 * t).exp());
            assert!(small.c_lower <= k + 1e-9 && k - 1e-9 <= small.c_upper, "{t} {k} {small:?}");
        }
        assert!(small.max_violation <= 1e-6 && large.max_violation <= 1e-6);
        assert!(large.c_lower >= 1.0 - 1e-9 && large.c_upper <= 1.0 / (1.0 - (-2.0f64).exp()) + 1e-9);
    }
}
