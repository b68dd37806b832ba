//! Applying `H_t^{UO}` to test functions by two independent routes.

use crate::error::{Error, Result};
use crate::kernels::{self, TimeSlice};
use crate::linalg::{self, Mat};
use crate::model::{Model, MAX_DIM};
use crate::par;
use crate::quadrature::{ball_rule, Estimate, TensorRule};
use rand_distr::{Distribution, StandardNormal};

/// Function on a uniform grid, interpolated by tensor cubic Lagrange
/// polynomials and clamped to the grid outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Nodes per axis.
    pub nodes: usize,
    /// Values in row-major order, first axis slowest.
    pub values: Vec<f64>,
}

impl Tabulated {
    pub fn node(&self, index: &[usize]) -> Vec<f64> {
        (0..self.lo.len())
            .map(|d| self.lo[d] + (self.hi[d] - self.lo[d]) * index[d] as f64 / (self.nodes - 1) as f64)
            .collect()
    }

    fn flat(&self, index: &[usize]) -> usize {
        index.iter().fold(0, |acc, &i| acc * self.nodes + i)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.lo.len();
        let mut base = [0usize; MAX_DIM];
        let mut coef = [[0.0f64; 4]; MAX_DIM];
        for d in 0..n {
            let h = (self.hi[d] - self.lo[d]) / (self.nodes - 1) as f64;
            let p = ((x[d] - self.lo[d]) / h).clamp(0.0, (self.nodes - 1) as f64);
            let i = (p.floor() as isize - 1).clamp(0, self.nodes as isize - 4) as usize;
            let s = p - i as f64;
            base[d] = i;
            for k in 0..4 {
                let mut c = 1.0;
                for j in 0..4 {
                    if j != k {
                        c *= (s - j as f64) / (k as f64 - j as f64);
                    }
                }
                coef[d][k] = c;
            }
        }
        let mut total = 0.0;
        let mut idx = [0usize; MAX_DIM];
        for corner in 0..4usize.pow(n as u32) {
            let mut c = corner;
            let mut w = 1.0;
            for d in (0..n).rev() {
                let k = c % 4;
                c /= 4;
                idx[d] = base[d] + k;
                w *= coef[d][k];
            }
            total += w * self.values[self.flat(&idx[..n])];
        }
        total
    }
}

/// Test functions acted on by the semigroup.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `x -> <v, x>`.
    Linear(Vec<f64>),
    /// `weight * 1{|x - center| <= radius}`.
    Indicator { center: Vec<f64>, radius: f64, weight: f64 },
    /// `weight * exp(-|x - center|^2 / (2 sigma^2))`.
    GaussianBump { center: Vec<f64>, sigma: f64, weight: f64 },
    Tabulated(Tabulated),
}

/// Bumps are treated as supported on this many standard deviations.
pub const BUMP_CUTOFF: f64 = 8.0;

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Linear(v) => v.iter().zip(x).map(|(a, b)| a * b).sum(),
            TestFunction::Indicator { center, radius, weight } => {
                if linalg::dist(center, x) <= *radius {
                    *weight
                } else {
                    0.0
                }
            }
            TestFunction::GaussianBump { center, sigma, weight } => {
                let d2: f64 = center.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                weight * (-0.5 * d2 / (sigma * sigma)).exp()
            }
            TestFunction::Tabulated(t) => t.eval(x),
        }
    }

    /// Ball outside which the function vanishes (to within `e^{-32}` for bumps).
    pub fn support_ball(&self) -> Option<(Vec<f64>, f64)> {
        match self {
            TestFunction::Indicator { center, radius, .. } => Some((center.clone(), *radius)),
            TestFunction::GaussianBump { center, sigma, .. } => Some((center.clone(), BUMP_CUTOFF * sigma)),
            _ => None,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            TestFunction::Constant(c) => *c >= 0.0,
            TestFunction::Linear(v) => v.iter().all(|x| *x == 0.0),
            TestFunction::Indicator { weight, .. } | TestFunction::GaussianBump { weight, .. } => *weight >= 0.0,
            TestFunction::Tabulated(t) => t.values.iter().all(|v| *v >= 0.0),
        }
    }

    /// `int f d gamma_{-inf}` for compactly supported functions.
    pub fn gamma_mass(&self, model: &Model, order: usize) -> Result<f64> {
        let (c, r) = self
            .support_ball()
            .ok_or_else(|| Error::InvalidArgument("mass requires a compactly supported function".into()))?;
        let rule = ball_rule(&c, r, order)?;
        Ok((0..rule.len())
            .map(|k| {
                let p = rule.point(k);
                rule.weights[k] * self.eval(p) * kernels::log_gamma_minus_inf(model, p).value()
            })
            .sum())
    }

    /// Indicator of `B(center, radius)` scaled to unit `gamma_{-inf}` mass.
    pub fn normalized_indicator(model: &Model, center: Vec<f64>, radius: f64) -> Result<Self> {
        let f = TestFunction::Indicator { center, radius, weight: 1.0 };
        let m = f.gamma_mass(model, 32)?;
        Ok(f.scaled(1.0 / m))
    }

    pub fn normalized_bump(model: &Model, center: Vec<f64>, sigma: f64) -> Result<Self> {
        let f = TestFunction::GaussianBump { center, sigma, weight: 1.0 };
        let m = f.gamma_mass(model, 64)?;
        Ok(f.scaled(1.0 / m))
    }

    pub fn scaled(self, k: f64) -> Self {
        match self {
            TestFunction::Constant(c) => TestFunction::Constant(c * k),
            TestFunction::Linear(v) => TestFunction::Linear(v.iter().map(|x| x * k).collect()),
            TestFunction::Indicator { center, radius, weight } => TestFunction::Indicator { center, radius, weight: weight * k },
            TestFunction::GaussianBump { center, sigma, weight } => TestFunction::GaussianBump { center, sigma, weight: weight * k },
            TestFunction::Tabulated(mut t) => {
                t.values.iter_mut().for_each(|v| *v *= k);
                TestFunction::Tabulated(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadKind {
    /// Deterministic product rules with this many nodes per axis.
    Tensor { nodes_per_axis: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub kind: QuadKind,
    /// Half-width of the kernel-integration box in standard deviations.
    pub truncation_radius: f64,
}

impl QuadratureSpec {
    pub fn tensor(nodes_per_axis: usize) -> Self {
        QuadratureSpec { kind: QuadKind::Tensor { nodes_per_axis }, truncation_radius: 8.0 }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        QuadratureSpec { kind: QuadKind::MonteCarlo { samples, seed }, truncation_radius: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            QuadKind::Tensor { nodes_per_axis } if nodes_per_axis < 8 => {
                return Err(Error::InvalidArgument("at least 8 nodes per axis required".into()))
            }
            QuadKind::MonteCarlo { samples, .. } if samples < 10_000 => {
                return Err(Error::InvalidArgument("at least 10^4 samples required".into()))
            }
            _ => {}
        }
        if self.truncation_radius < 6.0 {
            return Err(Error::InvalidArgument("truncation radius must be at least 6".into()));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        let kind = match self.kind {
            QuadKind::Tensor { nodes_per_axis } => QuadKind::Tensor { nodes_per_axis: (nodes_per_axis / 2).max(8) },
            QuadKind::MonteCarlo { samples, seed } => QuadKind::MonteCarlo { samples: samples / 2, seed },
        };
        QuadratureSpec { kind, ..*self }
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonIntegrable)
    }
}

/// Upper bound on `P(chi^2_n > x)`.
fn chi2_tail_bound(n: usize, x: f64) -> f64 {
    let k = n as f64;
    if x <= k {
        return 1.0;
    }
    ((x / k) * (1.0 - x / k).exp()).powf(k / 2.0)
}

/// `H_t f(x)` by the Kolmogorov formula
/// `E f(e^{-tB}(u + x))`, `u ~ N(0, Q_t)`.
pub fn apply_kolmogorov(model: &Model, f: &TestFunction, t: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    quad.validate()?;
    let slice = TimeSlice::new(model, t)?;
    let ctx = KolmogorovContext::new(&slice)?;
    let full = ctx.apply(f, x, quad)?;
    let half = ctx.apply(f, x, &quad.halved())?;
    Ok(Estimate { value: full.value, error: full.error.max((full.value - half.value).abs()) })
}

/// Per-time data for the Kolmogorov route.
pub struct KolmogorovContext<'a> {
    slice: &'a TimeSlice,
    chol: Mat,
    log_det_exp_tb: f64,
}

impl<'a> KolmogorovContext<'a> {
    pub fn new(slice: &'a TimeSlice) -> Result<Self> {
        let chol = slice.q_t.clone().cholesky().ok_or(Error::SingularCovariance(slice.t))?.l();
        let log_det_exp_tb = slice.exp_tb.determinant().abs().ln();
        Ok(KolmogorovContext { slice, chol, log_det_exp_tb })
    }

    /// `f(e^{-tB}(u + x))`.
    fn pushed(&self, f: &TestFunction, x: &[f64], u: &[f64]) -> f64 {
        let n = self.slice.dim;
        let mut a = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for i in 0..n {
            a[i] = u[i] + x[i];
        }
        linalg::matvec(self.slice.exp_minus_tb.as_slice(), n, &a[..n], &mut b[..n]);
        f.eval(&b[..n])
    }

    pub fn apply(&self, f: &TestFunction, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
        let n = self.slice.dim;
        match quad.kind {
            QuadKind::Tensor { nodes_per_axis } => {
                if let Some((c, r)) = f.support_ball() {
                    // Substitute v = e^{-tB}(u + x); the Gaussian weight becomes
                    // N(0, Q_t)(e^{tB} v - x) |det e^{tB}|.
                    let rule = ball_rule(&c, r, nodes_per_axis)?;
                    let qinv = self.slice.q_t_inv.as_slice();
                    let norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.slice.log_det_q_t + self.log_det_exp_tb;
                    let mut s = 0.0;
                    let mut w = [0.0; MAX_DIM];
                    for k in 0..rule.len() {
                        let v = rule.point(k);
                        linalg::matvec(self.slice.exp_tb.as_slice(), n, v, &mut w[..n]);
                        for i in 0..n {
                            w[i] -= x[i];
                        }
                        let g = (norm - 0.5 * linalg::quad_form(qinv, n, &w[..n])).exp();
                        s += rule.weights[k] * g * f.eval(v);
                    }
                    Ok(Estimate { value: finite(s)?, error: 0.0 })
                } else {
                    let rule = TensorRule::standard_normal(n, nodes_per_axis);
                    let mut s = 0.0;
                    let mut u = [0.0; MAX_DIM];
                    for k in 0..rule.len() {
                        linalg::matvec(self.chol.as_slice(), n, rule.point(k), &mut u[..n]);
                        s += rule.weights[k] * self.pushed(f, x, &u[..n]);
                    }
                    Ok(Estimate { value: finite(s)?, error: 0.0 })
                }
            }
            QuadKind::MonteCarlo { samples, seed } => {
                let parts = par::mc_chunks(seed, samples, |rng, count| {
                    let mut z = [0.0; MAX_DIM];
                    let mut u = [0.0; MAX_DIM];
                    let (mut s, mut s2) = (0.0, 0.0);
                    for _ in 0..count {
                        for v in z.iter_mut().take(n) {
                            *v = StandardNormal.sample(rng);
                        }
                        linalg::matvec(self.chol.as_slice(), n, &z[..n], &mut u[..n]);
                        let v = self.pushed(f, x, &u[..n]);
                        s += v;
                        s2 += v * v;
                    }
                    (s, s2)
                });
                mc_summary(&parts, samples)
            }
        }
    }
}

fn mc_summary(parts: &[(f64, f64)], samples: usize) -> Result<Estimate> {
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = s / samples as f64;
    let var = (s2 / samples as f64 - m * m).max(0.0);
    Ok(Estimate { value: finite(m)?, error: (var / samples as f64).sqrt() })
}

/// `H_t f(x) = int K_t^{UO}(x, u) f(u) d gamma_{-inf}(u)`.
pub fn apply_kernel(model: &Model, f: &TestFunction, t: f64, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    quad.validate()?;
    let slice = TimeSlice::new(model, t)?;
    let full = apply_kernel_with(model, &slice, f, x, quad)?;
    let half = apply_kernel_with(model, &slice, f, x, &quad.halved())?;
    Ok(Estimate { value: full.value, error: full.error.max((full.value - half.value).abs()) })
}

/// Integrand of the kernel route: `K_t^{UO}(x, u) gamma_{-inf}(u)` as a product of logs.
fn kernel_density(model: &Model, slice: &TimeSlice, x: &[f64], u: &[f64]) -> f64 {
    (slice.log_kernel_uo(x, u) + kernels::log_gamma_minus_inf(model, u).ln()).exp()
}

pub fn apply_kernel_with(model: &Model, slice: &TimeSlice, f: &TestFunction, x: &[f64], quad: &QuadratureSpec) -> Result<Estimate> {
    let n = model.dim;
    let mut mean = vec![0.0; n];
    slice.uo_mean(x, &mut mean);
    match quad.kind {
        QuadKind::Tensor { nodes_per_axis } => {
            let rule = match f.support_ball() {
                Some((c, r)) => ball_rule(&c, r, nodes_per_axis)?,
                None => {
                    let tail = chi2_tail_bound(n, quad.truncation_radius.powi(2));
                    if tail > 1e-9 {
                        return Err(Error::TruncationDominates { tail, tolerance: 1e-9 });
                    }
                    // Box in the whitened coordinates u = mean + L z of the Gaussian factor.
                    let chol = slice.sigma_t.clone().cholesky().ok_or(Error::SingularCovariance(slice.t))?.l();
                    let det: f64 = (0..n).map(|i| chol[(i, i)]).product();
                    let r = quad.truncation_radius;
                    let mut box_rule = TensorRule::composite_box(&vec![-r; n], &vec![r; n], nodes_per_axis.div_ceil(8), 8);
                    let mut u = vec![0.0; n];
                    for k in 0..box_rule.len() {
                        linalg::matvec(chol.as_slice(), n, box_rule.point(k), &mut u);
                        for i in 0..n {
                            box_rule.points[k * n + i] = u[i] + mean[i];
                        }
                        box_rule.weights[k] *= det;
                    }
                    box_rule
                }
            };
            let mut s = 0.0;
            for k in 0..rule.len() {
                let u = rule.point(k);
                let fu = f.eval(u);
                if fu != 0.0 {
                    s += rule.weights[k] * fu * kernel_density(model, slice, x, u);
                }
            }
            Ok(Estimate { value: finite(s)?, error: 0.0 })
        }
        QuadKind::MonteCarlo { samples, seed } => {
            let cov = &slice.sigma_t * 1.2;
            let chol = cov.cholesky().ok_or(Error::SingularCovariance(slice.t))?.l();
            let log_norm = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + (0..n).map(|i| chol[(i, i)].ln()).sum::<f64>();
            let parts = par::mc_chunks(seed, samples, |rng, count| {
                let mut z = [0.0; MAX_DIM];
                let mut u = [0.0; MAX_DIM];
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..count {
                    for v in z.iter_mut().take(n) {
                        *v = StandardNormal.sample(rng);
                    }
                    linalg::matvec(chol.as_slice(), n, &z[..n], &mut u[..n]);
                    for i in 0..n {
                        u[i] += mean[i];
                    }
                    let fu = f.eval(&u[..n]);
                    let v = if fu == 0.0 {
                        0.0
                    } else {
                        let lw = log_norm + 0.5 * z[..n].iter().map(|v| v * v).sum::<f64>();
                        fu * (slice.log_kernel_uo(x, &u[..n]) + kernels::log_gamma_minus_inf(model, &u[..n]).ln() + lw).exp()
                    };
                    s += v;
                    s2 += v * v;
                }
                (s, s2)
            });
            mc_summary(&parts, samples)
        }
    }
}

/// Result of the composition check.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupCheck {
    pub deviation: f64,
    /// Table nodes per axis used for the inner function.
    pub resolution: usize,
}

/// `max_x |H_t(H_s f)(x) - H_{t+s} f(x)|` over `x_grid`, with `H_s f`
/// tabulated and interpolated. The table is refined until the deviation
/// stabilises to 10%.
pub fn check_semigroup_law(
    model: &Model,
    f: &TestFunction,
    t: f64,
    s: f64,
    x_grid: &[Vec<f64>],
    quad: &QuadratureSpec,
) -> Result<SemigroupCheck> {
    quad.validate()?;
    let n = model.dim;
    let nodes = match quad.kind {
        QuadKind::Tensor { nodes_per_axis } => nodes_per_axis,
        QuadKind::MonteCarlo { .. } => 32,
    };
    let st = TimeSlice::new(model, t)?;
    let ss = TimeSlice::new(model, s)?;
    let sts = TimeSlice::new(model, t + s)?;
    let ks = KolmogorovContext::new(&ss)?;
    let kt = KolmogorovContext::new(&st)?;
    let kts = KolmogorovContext::new(&sts)?;
    let direct = par::try_map_indexed(x_grid.len(), |i| kts.apply(f, &x_grid[i], quad).map(|e| e.value))?;

    // Region the outer Hermite rule probes, ignoring nodes of negligible weight.
    let rule = TensorRule::standard_normal(n, nodes);
    let wmax = rule.weights.iter().cloned().fold(0.0, f64::max);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut u = vec![0.0; n];
    let mut y = vec![0.0; n];
    for x in x_grid {
        for k in 0..rule.len() {
            if rule.weights[k] < 1e-16 * wmax {
                continue;
            }
            linalg::matvec(kt.chol.as_slice(), n, rule.point(k), &mut u);
            let a: Vec<f64> = (0..n).map(|i| u[i] + x[i]).collect();
            linalg::matvec(st.exp_minus_tb.as_slice(), n, &a, &mut y);
            for i in 0..n {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
    }
    for i in 0..n {
        let pad = 0.02 * (hi[i] - lo[i]).max(1e-3);
        lo[i] -= pad;
        hi[i] += pad;
    }
    let (mut res, max_res): (usize, usize) = match n {
        1 => (32, 512),
        2 => (16, 96),
        _ => (8, 24),
    };
    let mut last: Option<f64> = None;
    loop {
        let total = res.pow(n as u32);
        let values = par::try_map_indexed(total, |flat| {
            let mut idx = vec![0usize; n];
            let mut c = flat;
            for d in (0..n).rev() {
                idx[d] = c % res;
                c /= res;
            }
            let p: Vec<f64> = (0..n).map(|d| lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / (res - 1) as f64).collect();
            ks.apply(f, &p, quad).map(|e| e.value)
        })?;
        let inner = TestFunction::Tabulated(Tabulated { lo: lo.clone(), hi: hi.clone(), nodes: res, values });
        let outer = par::try_map_indexed(x_grid.len(), |i| kt.apply(&inner, &x_grid[i], &QuadratureSpec::tensor(nodes)).map(|e| e.value))?;
        let dev = outer.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let stable = last.is_some_and(|p| (dev - p).abs() <= 0.1 * p.max(1e-15));
        if stable || res * 2 > max_res {
            return Ok(SemigroupCheck { deviation: dev, resolution: res });
        }
        last = Some(dev);
        res *= 2;
    }
}

/// `<H_t f, g>` and `<f, H_t g>` in `L^2(gamma_{-inf})`, with an error estimate
/// from halving every rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub error: f64,
}

impl SymmetryCheck {
    pub fn defect(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

fn pairing(model: &Model, ctx: &KolmogorovContext, moved: &TestFunction, fixed: &TestFunction, nodes: usize) -> Result<f64> {
    let (c, r) = fixed
        .support_ball()
        .ok_or_else(|| Error::InvalidArgument("symmetry check needs compactly supported functions".into()))?;
    let rule = ball_rule(&c, r, nodes)?;
    let inner = QuadratureSpec::tensor(nodes);
    let vals = par::try_map_indexed(rule.len(), |k| {
        let p = rule.point(k);
        let w = rule.weights[k] * fixed.eval(p) * kernels::log_gamma_minus_inf(model, p).value();
        ctx.apply(moved, p, &inner).map(|e| w * e.value)
    })?;
    Ok(vals.iter().sum())
}

pub fn check_symmetry(model: &Model, f: &TestFunction, g: &TestFunction, t: f64, quad: &QuadratureSpec) -> Result<SymmetryCheck> {
    quad.validate()?;
    let nodes = match quad.kind {
        QuadKind::Tensor { nodes_per_axis } => nodes_per_axis,
        QuadKind::MonteCarlo { .. } => return Err(Error::InvalidArgument("symmetry check uses tensor rules".into())),
    };
    let slice = TimeSlice::new(model, t)?;
    let ctx = KolmogorovContext::new(&slice)?;
    let lhs = pairing(model, &ctx, f, g, nodes)?;
    let rhs = pairing(model, &ctx, g, f, nodes)?;
    let h = (nodes / 2).max(8);
    let lhs_h = pairing(model, &ctx, f, g, h)?;
    let rhs_h = pairing(model, &ctx, g, f, h)?;
    let error = (lhs - lhs_h).abs() + (rhs - rhs_h).abs() + 1e-14 * (lhs.abs() + rhs.abs());
    Ok(SymmetryCheck { lhs, rhs, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(c: Vec<f64>) -> TestFunction {
        TestFunction::GaussianBump { center: c, sigma: 1.0, weight: 1.0 }
    }

    #[test]
    fn constants_and_linear_functions() {
        let m = Model::preset("nonnormal2d").unwrap();
        let q = QuadratureSpec::tensor(64);
        let x = [0.7, -1.2];
        for t in [0.3, 2.0] {
            let one = apply_kolmogorov(&m, &TestFunction::Constant(1.0), t, &x, &q).unwrap();
            assert!((one.value - 1.0).abs() < 1e-12);
            let one = apply_kernel(&m, &TestFunction::Constant(1.0), t, &x, &q).unwrap();
            assert!((one.value - 1.0).abs() < 1e-8, "{one:?}");
            let v = vec![0.4, -2.0];
            let lin = apply_kolmogorov(&m, &TestFunction::Linear(v.clone()), t, &x, &q).unwrap();
            let e = m.exp_b(-t).unwrap() * linalg::Vector::from_column_slice(&x);
            let exact = v[0] * e[0] + v[1] * e[1];
            assert!((lin.value - exact).abs() < 1e-8 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn bump_paths_agree() {
        let m = Model::preset("salogni1d").unwrap();
        let q = QuadratureSpec::tensor(64);
        for t in [0.5, 2.0] {
            for x in [-2.0, -0.5, 0.0, 1.0, 2.0] {
                let a = apply_kolmogorov(&m, &bump(vec![0.0]), t, &[x], &q).unwrap();
                let b = apply_kernel(&m, &bump(vec![0.0]), t, &[x], &q).unwrap();
                assert!((a.value - b.value).abs() < 1e-8, "{t} {x} {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn indicator_paths_agree() {
        let m = Model::preset("salogni1d").unwrap();
        let f = TestFunction::Indicator { center: vec![0.0], radius: 0.5, weight: 1.0 };
        let q = QuadratureSpec::tensor(64);
        let a = apply_kolmogorov(&m, &f, 1.0, &[0.0], &q).unwrap();
        let b = apply_kernel(&m, &f, 1.0, &[0.0], &q).unwrap();
        assert!(a.value > 0.0 && a.value < 1.0);
        assert!((a.value - b.value).abs() < 1e-4);
        let c = apply_kolmogorov(&m, &f, 1.0, &[0.0], &QuadratureSpec::monte_carlo(200_000, 3)).unwrap();
        assert!((a.value - c.value).abs() < 5.0 * c.error.max(1e-4), "{a:?} {c:?}");
    }

    #[test]
    fn tabulated_interpolation_is_cubic_exact() {
        let values: Vec<f64> = (0..11).map(|i| (i as f64 * 0.1).powi(3)).collect();
        let t = Tabulated { lo: vec![0.0], hi: vec![1.0], nodes: 11, values };
        assert!((t.eval(&[0.537]) - 0.537f64.powi(3)).abs() < 1e-13);
    }

    #[test]
    fn semigroup_law_for_constant() {
        let m = Model::preset("isotropic2d").unwrap();
        let grid = vec![vec![0.0, 0.0], vec![1.0, -0.5]];
        let r = check_semigroup_law(&m, &TestFunction::Constant(1.0), 0.4, 0.6, &grid, &QuadratureSpec::tensor(16)).unwrap();
        assert!(r.deviation <= 2e-6);
    }

    #[test]
    fn quadrature_spec_validation() {
        assert!(QuadratureSpec::tensor(4).validate().is_err());
        assert!(QuadratureSpec::monte_carlo(10, 1).validate().is_err());
        let mut q = QuadratureSpec::tensor(16);
        q.truncation_radius = 3.0;
        assert!(q.validate().is_err());
    }
}
