//! Polar coordinates along the flow `D_s`, caps, tubes and annuli.

use crate::error::{Error, Result};
use crate::growth::random_unit;
use crate::linalg::{self, Mat};
use crate::maximal::{region_of, Region};
use crate::model::{Model, MAX_DIM};
use crate::par;
use crate::quadrature::{adaptive, Estimate, Tolerance};
use rand::Rng;
use std::f64::consts::PI;

/// `x = D_s xt` with `R(xt) = beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCoord {
    pub s: f64,
    pub xt: Vec<f64>,
    pub beta: f64,
}

const S_LIMIT: f64 = 200.0;

fn apply(m: &Mat, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    linalg::matvec(m.as_slice(), n, x, &mut y);
    y
}

/// Polar coordinates of `x != 0` on the ellipsoid `{R = beta}`.
pub fn to_polar(model: &Model, x: &[f64], beta: f64) -> Result<PolarCoord> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let rx = model.r(x);
    if rx == 0.0 {
        return Err(Error::ZeroVector);
    }
    // g(s) = ln R(D_{-s} x) - ln beta is strictly decreasing in s.
    let eval = |s: f64| -> Result<(f64, Vec<f64>)> {
        let y = apply(&model.d(-s).map_err(|_| Error::RootFindFailed(S_LIMIT))?, x);
        let r = model.r(&y);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::RootFindFailed(S_LIMIT));
        }
        Ok((r.ln() - beta.ln(), y))
    };
    let g0 = rx.ln() - beta.ln();
    if g0.abs() <= 1e-14 {
        return Ok(PolarCoord { s: 0.0, xt: x.to_vec(), beta });
    }
    let (mut lo, mut hi) = if g0 > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    loop {
        let probe = if g0 > 0.0 { hi } else { lo };
        let (g, _) = eval(probe)?;
        if (g0 > 0.0 && g < 0.0) || (g0 < 0.0 && g > 0.0) || g == 0.0 {
            break;
        }
        if g0 > 0.0 {
            lo = hi;
            hi *= 2.0;
        } else {
            hi = lo;
            lo *= 2.0;
        }
        if hi.abs() > S_LIMIT || lo.abs() > S_LIMIT {
            return Err(Error::RootFindFailed(S_LIMIT));
        }
    }
    // Safeguarded Newton; the derivative of R along the flow is the velocity form.
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, y) = eval(s)?;
        if g.abs() <= 1e-14 {
            return Ok(PolarCoord { s, xt: y, beta });
        }
        if g > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let dg = -model.r_velocity(&y) / model.r(&y);
        let mut next = s - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo).abs() <= 1e-15 * s.abs().max(1.0) {
            return Ok(PolarCoord { s, xt: y, beta });
        }
        s = next;
    }
    let (_, y) = eval(s)?;
    Ok(PolarCoord { s, xt: y, beta })
}

pub fn from_polar(model: &Model, p: &PolarCoord) -> Result<Vec<f64>> {
    Ok(apply(&model.d(p.s)?, &p.xt))
}

/// Lebesgue density against `dS(xt) ds`:
/// `e^{-s tr B} |Q^{1/2} Q_inf^{-1} xt|^2 / (2 |Q_inf^{-1} xt|)`.
pub fn polar_area_element(model: &Model, xt: &[f64], s: f64) -> f64 {
    let w = apply(&model.q_inf_inv, xt);
    (-s * model.trace_b).exp() * model.r_velocity(xt) / linalg::norm(&w)
}

/// Drop `R(y) - R(D_{-tau} y)`, computed from `D_{-tau} - I` without cancellation.
pub fn r_drop(model: &Model, y: &[f64], tau: f64) -> Result<f64> {
    let n = y.len();
    let dm = model.d_minus_identity(-tau)?;
    let mut d = [0.0; MAX_DIM];
    linalg::matvec(dm.as_slice(), n, y, &mut d[..n]);
    let mut v = [0.0; MAX_DIM];
    for i in 0..n {
        d[i] = -d[i];
        v[i] = 2.0 * y[i] - d[i];
    }
    let mut qd = [0.0; MAX_DIM];
    linalg::matvec(model.q_inf_inv.as_slice(), n, &d[..n], &mut qd[..n]);
    Ok(0.5 * qd[..n].iter().zip(&v[..n]).map(|(a, b)| a * b).sum::<f64>())
}

/// `int_0^{tau_max} exp(-T tau - (R(y) - R(D_{-tau} y))) d tau` with `T = |tr B|`.
/// The integrand is decreasing; panels grow geometrically from the scale set
/// by the initial velocity, and integration stops once the remaining tail is
/// below `1e-12` of the accumulated value. Returns the integral and the
/// truncation point.
pub fn drop_integral(model: &Model, y: &[f64], tau_max: f64) -> Result<(f64, f64)> {
    let big_t = model.trace_b.abs();
    let rate = model.r_velocity(y) + big_t;
    let f = |tau: f64| -> f64 {
        match r_drop(model, y, tau) {
            Ok(d) => (-big_t * tau - d).exp(),
            Err(_) => 0.0,
        }
    };
    let mut a = 0.0;
    let mut h = (0.05 / rate).min(tau_max);
    let mut total = 0.0;
    let tol = Tolerance { abs: 0.0, rel: 1e-11, max_panels: 2000 };
    loop {
        let b = (a + h).min(tau_max);
        let e = adaptive(f, a, b, Tolerance { abs: 1e-13 * total, ..tol })?;
        total += e.value;
        a = b;
        if a >= tau_max {
            return Ok((total, a));
        }
        let fa = f(a);
        let tail = fa * (tau_max - a).min(1.0 / big_t);
        if tail <= 1e-12 * total {
            return Ok((total, a));
        }
        if a > S_LIMIT {
            return Err(Error::TailNotNegligible { tail: tail / total });
        }
        h *= 2.0;
    }
}

/// Forbidden zone over the cap `{xt in E_beta : |xt - center| < radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub center: Vec<f64>,
    pub radius: f64,
    pub beta: f64,
}

impl Tube {
    pub fn new(model: &Model, center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("tube radius must be positive".into()));
        }
        let beta = model.r(&center);
        if !(beta > 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Tube { center, radius, beta })
    }

    /// Membership: `R(x) <= beta` and the polar projection lies in the cap.
    pub fn contains(&self, model: &Model, x: &[f64]) -> Result<bool> {
        let r = model.r(x);
        if r > self.beta * (1.0 + 1e-12) {
            return Ok(false);
        }
        if r == 0.0 {
            return Ok(false);
        }
        let p = to_polar(model, x, self.beta)?;
        Ok(p.s <= 1e-12 && linalg::dist(&p.xt, &self.center) < self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TubeMethod {
    PolarQuadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `(2 pi)^{n/2} det(Q_inf)^{1/2}`, the constant in the inverse Gaussian density.
fn gamma_minus_norm(model: &Model) -> f64 {
    (0.5 * model.dim as f64 * (2.0 * PI).ln() + 0.5 * model.log_det_q_inf).exp()
}

/// Point of `E_beta` at angle `theta` (two dimensions).
pub fn ellipse_point(model: &Model, beta: f64, theta: f64) -> [f64; 2] {
    let s = linalg::sym_sqrt(&model.q_inf);
    let k = (2.0 * beta).sqrt();
    let (c, sn) = (theta.cos(), theta.sin());
    [k * (s[(0, 0)] * c + s[(0, 1)] * sn), k * (s[(1, 0)] * c + s[(1, 1)] * sn)]
}

struct Ellipse {
    half: Mat,
    k: f64,
}

impl Ellipse {
    fn new(model: &Model, beta: f64) -> Self {
        Ellipse { half: linalg::sym_sqrt(&model.q_inf), k: (2.0 * beta).sqrt() }
    }

    fn point(&self, th: f64) -> [f64; 2] {
        let (c, s) = (th.cos(), th.sin());
        let h = &self.half;
        [self.k * (h[(0, 0)] * c + h[(0, 1)] * s), self.k * (h[(1, 0)] * c + h[(1, 1)] * s)]
    }

    fn speed(&self, th: f64) -> f64 {
        let (c, s) = (th.cos(), th.sin());
        let h = &self.half;
        let a = self.k * (-h[(0, 0)] * s + h[(0, 1)] * c);
        let b = self.k * (-h[(1, 0)] * s + h[(1, 1)] * c);
        (a * a + b * b).sqrt()
    }
}

/// Angular intervals of the cap on a two-dimensional ellipse.
pub fn cap_intervals(model: &Model, tube: &Tube) -> Vec<(f64, f64)> {
    let el = Ellipse::new(model, tube.beta);
    let inside = |th: f64| linalg::dist(&el.point(th), &tube.center) - tube.radius;
    let m = 4096;
    let h = 2.0 * PI / m as f64;
    let vals: Vec<f64> = (0..=m).map(|k| inside(k as f64 * h)).collect();
    if vals.iter().all(|v| *v < 0.0) {
        return vec![(0.0, 2.0 * PI)];
    }
    let refine = |mut a: f64, mut b: f64| {
        let fa = inside(a);
        for _ in 0..80 {
            let c = 0.5 * (a + b);
            if (inside(c) < 0.0) == (fa < 0.0) {
                a = c;
            } else {
                b = c;
            }
        }
        0.5 * (a + b)
    };
    // Rotate the scan to start at a point outside the cap.
    let start = vals.iter().position(|v| *v >= 0.0).unwrap_or(0);
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    for j in 0..m {
        let k = (start + j) % m;
        let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
        let (va, vb) = (vals[k], vals[k + 1]);
        if va >= 0.0 && vb < 0.0 {
            let r = refine(a, b);
            open = Some(if j > 0 && k < start { r + 2.0 * PI } else { r });
        } else if va < 0.0 && vb >= 0.0 {
            if let Some(o) = open.take() {
                let mut r = refine(a, b);
                if k < start {
                    r += 2.0 * PI;
                }
                out.push((o, r));
            }
        }
    }
    out
}

/// `gamma_{-inf}(Z)` for the tube `Z = {D_s xt : s <= 0, xt in cap}`.
pub fn tube_measure(model: &Model, tube: &Tube, method: TubeMethod) -> Result<Estimate> {
    match method {
        TubeMethod::PolarQuadrature => tube_measure_polar(model, tube),
        TubeMethod::MonteCarlo { samples, seed } => tube_measure_mc(model, tube, samples, seed),
    }
}

fn tube_measure_polar(model: &Model, tube: &Tube) -> Result<Estimate> {
    let norm = gamma_minus_norm(model) * tube.beta.exp();
    match model.dim {
        1 => {
            let r = (2.0 * tube.beta * model.q_inf[(0, 0)]).sqrt();
            let mut total = 0.0;
            for xt in [r, -r] {
                if (xt - tube.center[0]).abs() < tube.radius {
                    let (s, _) = drop_integral(model, &[xt], f64::INFINITY)?;
                    total += polar_area_element(model, &[xt], 0.0) * s;
                }
            }
            Ok(Estimate { value: norm * total, error: 1e-10 * norm * total })
        }
        2 => {
            let el = Ellipse::new(model, tube.beta);
            let failure = std::cell::RefCell::new(None);
            let integrand = |th: f64| {
                let p = el.point(th);
                match drop_integral(model, &p, f64::INFINITY) {
                    Ok((s, _)) => polar_area_element(model, &p, 0.0) * el.speed(th) * s,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            };
            let mut total = 0.0;
            let mut err = 0.0;
            for (a, b) in cap_intervals(model, tube) {
                let e = adaptive(integrand, a, b, Tolerance::new(0.0, 1e-9))?;
                total += e.value;
                err += e.error;
            }
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            Ok(Estimate { value: norm * total, error: norm * err })
        }
        n => Err(Error::InvalidArgument(format!("polar tube quadrature supports n <= 2, got {n}"))),
    }
}

/// Bounding box of the tube, from the flow lines of cap points.
fn tube_box(model: &Model, tube: &Tube) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.dim;
    let mut cap = Vec::new();
    match n {
        1 => {
            let r = (2.0 * tube.beta * model.q_inf[(0, 0)]).sqrt();
            for xt in [r, -r] {
                if (xt - tube.center[0]).abs() < tube.radius {
                    cap.push(vec![xt]);
                }
            }
        }
        2 => {
            let el = Ellipse::new(model, tube.beta);
            for (a, b) in cap_intervals(model, tube) {
                for k in 0..=64 {
                    cap.push(el.point(a + (b - a) * k as f64 / 64.0).to_vec());
                }
            }
        }
        _ => return Err(Error::InvalidArgument("tube Monte Carlo supports n <= 2".into())),
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut taus = vec![0.0];
    let mut t = 1e-3;
    while t < 60.0 {
        taus.push(t);
        t *= 1.15;
    }
    let ds: Vec<Mat> = taus.iter().map(|&t| model.d(-t)).collect::<Result<_>>()?;
    for p in &cap {
        for d in &ds {
            let y = apply(d, p);
            for i in 0..n {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
    }
    for i in 0..n {
        let pad = 0.03 * (hi[i] - lo[i]) + 1e-3;
        lo[i] -= pad;
        hi[i] += pad;
    }
    Ok((lo, hi))
}

fn tube_measure_mc(model: &Model, tube: &Tube, samples: usize, seed: u64) -> Result<Estimate> {
    let n = model.dim;
    let (lo, hi) = tube_box(model, tube)?;
    let vol: f64 = (0..n).map(|i| hi[i] - lo[i]).product();
    let norm = gamma_minus_norm(model);
    let parts = par::mc_chunks(seed, samples, |rng, count| -> Result<(f64, f64)> {
        let (mut s, mut s2) = (0.0, 0.0);
        let mut x = vec![0.0; n];
        for _ in 0..count {
            for i in 0..n {
                x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
            }
            let r = model.r(&x);
            // Points this deep carry relative weight below e^{-40}.
            if r > tube.beta || r < tube.beta - 40.0 {
                continue;
            }
            if tube.contains(model, &x)? {
                let w = (r - tube.beta).exp();
                s += w;
                s2 += w * w;
            }
        }
        Ok((s, s2))
    });
    let (mut s, mut s2) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let m = s / samples as f64;
    let var = (s2 / samples as f64 - m * m).max(0.0);
    let scale = vol * norm * tube.beta.exp();
    Ok(Estimate { value: scale * m, error: scale * (var / samples as f64).sqrt() })
}

/// Polar patch `{D_s xt(theta) : theta in [th0, th1], s in [s0, s1]}` over `E_beta`, `n = 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPatch {
    pub beta: f64,
    pub theta: (f64, f64),
    pub s: (f64, f64),
}

/// Lebesgue volume of a patch by integrating the area element.
pub fn patch_volume(model: &Model, patch: &PolarPatch) -> Result<f64> {
    if model.dim != 2 {
        return Err(Error::InvalidArgument("patches are two-dimensional".into()));
    }
    let el = Ellipse::new(model, patch.beta);
    let tb = model.trace_b;
    let (s0, s1) = patch.s;
    // The s-dependence of the element is exactly e^{-s tr B}.
    let radial = ((-s1 * tb).exp() - (-s0 * tb).exp()) / -tb;
    let e = adaptive(
        |th| {
            let p = el.point(th);
            polar_area_element(model, &p, 0.0) * el.speed(th)
        },
        patch.theta.0,
        patch.theta.1,
        Tolerance::new(0.0, 1e-12),
    )?;
    Ok(radial * e.value)
}

/// Monte Carlo volume of a patch: uniform points in a bounding box, classified by polar coordinates.
pub fn patch_volume_mc(model: &Model, patch: &PolarPatch, samples: usize, seed: u64) -> Result<Estimate> {
    if model.dim != 2 {
        return Err(Error::InvalidArgument("patches are two-dimensional".into()));
    }
    let el = Ellipse::new(model, patch.beta);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..=32 {
        let th = patch.theta.0 + (patch.theta.1 - patch.theta.0) * i as f64 / 32.0;
        let p = el.point(th);
        for j in 0..=32 {
            let s = patch.s.0 + (patch.s.1 - patch.s.0) * j as f64 / 32.0;
            let y = apply(&model.d(s)?, &p);
            for k in 0..2 {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
            }
        }
    }
    for k in 0..2 {
        let pad = 0.05 * (hi[k] - lo[k]);
        lo[k] -= pad;
        hi[k] += pad;
    }
    let half = linalg::sym_inv_sqrt(&model.q_inf);
    let k = (2.0 * patch.beta).sqrt();
    let angle = |xt: &[f64]| {
        let w = apply(&half, xt);
        let mut th = (w[1] / k).atan2(w[0] / k);
        while th < patch.theta.0 {
            th += 2.0 * PI;
        }
        th
    };
    let vol = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let parts = par::mc_chunks(seed, samples, |rng, count| -> Result<usize> {
        let mut hits = 0;
        for _ in 0..count {
            let x = [lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(), lo[1] + (hi[1] - lo[1]) * rng.random::<f64>()];
            let p = to_polar(model, &x, patch.beta)?;
            if p.s >= patch.s.0 && p.s <= patch.s.1 && angle(&p.xt) <= patch.theta.1 {
                hits += 1;
            }
        }
        Ok(hits)
    });
    let mut hits = 0;
    for p in parts {
        hits += p?;
    }
    let frac = hits as f64 / samples as f64;
    Ok(Estimate { value: vol * frac, error: vol * (frac * (1.0 - frac) / samples as f64).sqrt() })
}

/// Minimal ratios in the two distance estimates along the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub beta: f64,
    /// `min |x0 - x1| / |xt0 - xt1|` over pairs with `R(x0) > beta/2`.
    pub separation_min: f64,
    /// `min |x0 - x1| / (sqrt(beta) |s0 - s1|)` over pairs that also have `s1 >= 0`.
    pub radial_min: f64,
    /// Polar coordinates `(s0, xt0, s1, xt1)` attaining each minimum.
    pub separation_argmin: (f64, Vec<f64>, f64, Vec<f64>),
    pub radial_argmin: (f64, Vec<f64>, f64, Vec<f64>),
    pub sample_count: usize,
    pub seed: u64,
}

/// Point of `E_beta` along a direction.
pub fn project_to_ellipsoid(model: &Model, dir: &[f64], beta: f64) -> Vec<f64> {
    let k = (beta / model.r(dir)).sqrt();
    dir.iter().map(|v| v * k).collect()
}

pub fn check_distance_bounds(model: &Model, beta: f64, sample_count: usize, seed: u64) -> Result<DistanceReport> {
    if beta < 4.0 {
        return Err(Error::InvalidArgument("distance bounds need beta >= 4".into()));
    }
    let n = model.dim;
    let mut rng = par::stream_rng(seed, 0);
    let mut sep = (f64::INFINITY, (0.0, vec![], 0.0, vec![]));
    let mut rad = (f64::INFINITY, (0.0, vec![], 0.0, vec![]));
    let mut drawn = 0;
    let mut guard = 0;
    while drawn < sample_count {
        guard += 1;
        if guard > 100 * sample_count {
            return Err(Error::DegenerateSample("could not draw admissible pairs".into()));
        }
        let xt0 = project_to_ellipsoid(model, &random_unit(&mut rng, n), beta);
        let xt1 = project_to_ellipsoid(model, &random_unit(&mut rng, n), beta);
        let s0: f64 = rng.random_range(-3.0..2.0);
        let s1: f64 = rng.random_range(-3.0..2.0);
        let x0 = apply(&model.d(s0)?, &xt0);
        if model.r(&x0) <= beta / 2.0 {
            continue;
        }
        let x1 = apply(&model.d(s1)?, &xt1);
        let dx = linalg::dist(&x0, &x1);
        let dt = linalg::dist(&xt0, &xt1);
        if dx < 1e-6 || dt < 1e-6 || (s0 - s1).abs() < 1e-6 {
            continue;
        }
        drawn += 1;
        let r1 = dx / dt;
        if r1 < sep.0 {
            sep = (r1, (s0, xt0.clone(), s1, xt1.clone()));
        }
        if s1 >= 0.0 {
            let r2 = dx / (beta.sqrt() * (s0 - s1).abs());
            if r2 < rad.0 {
                rad = (r2, (s0, xt0, s1, xt1));
            }
        }
    }
    Ok(DistanceReport {
        beta,
        separation_min: sep.0,
        radial_min: rad.0,
        separation_argmin: sep.1,
        radial_argmin: rad.1,
        sample_count,
        seed,
    })
}

/// Dyadic annulus of the global region: `m` with
/// `2^{m-1} rho < |u - D_{-t} x| <= 2^m rho`, `rho = min(1, sqrt t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusIndex {
    pub m: u32,
    pub t: f64,
}

/// Annulus index from the distance `w = |u - D_{-t} x|` and `rho`.
pub fn dyadic_index(w: f64, rho: f64) -> u32 {
    let mut m = 0u32;
    let mut upper = rho;
    while w > upper {
        m += 1;
        upper *= 2.0;
    }
    m
}

/// `None` when `(x, u)` is in the local region.
pub fn annulus_index(model: &Model, t: f64, x: &[f64], u: &[f64]) -> Result<Option<AnnulusIndex>> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    if region_of(x, u) == Region::Local {
        return Ok(None);
    }
    let c = apply(&model.d(-t)?, x);
    let w = linalg::dist(u, &c);
    Ok(Some(AnnulusIndex { m: dyadic_index(w, t.sqrt().min(1.0)), t }))
}

/// Both sides of the integral inequality
/// `int_0^P e^{T r} e^{R(D_r xt)} dr <~ e^{T P} e^{R(D_P xt)} |D_P xt|^{-2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoIntegral {
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// Kept apart since both sides carry `R(D_P xt)`, which can reach `e^{40}`.
    pub log_ratio: f64,
}

impl RhoIntegral {
    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }
}

pub fn check_rho_integral(model: &Model, xt: &[f64], rho_max: f64) -> Result<RhoIntegral> {
    if !(rho_max > 0.0) {
        return Err(Error::InvalidArgument("rho_max must be positive".into()));
    }
    let big_t = model.trace_b.abs();
    let y = apply(&model.d(rho_max)?, xt);
    // Substituting r = P - tau turns the integral into a drop integral from y.
    let (i, _) = drop_integral(model, &y, rho_max)?;
    let head = big_t * rho_max + model.r(&y);
    let norm2 = y.iter().map(|v| v * v).sum::<f64>();
    Ok(RhoIntegral { log_lhs: head + i.ln(), log_rhs: head - norm2.ln(), log_ratio: i.ln() + norm2.ln() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_polar_coordinates() {
        let m = Model::preset("salogni1d").unwrap();
        let p = to_polar(&m, &[std::f64::consts::E], 1.0).unwrap();
        assert_relative_eq!(p.s, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.xt[0], 1.0, epsilon = 1e-12);
        let p = to_polar(&m, &[-1.0], 1.0).unwrap();
        assert_eq!(p.s, 0.0);
        assert!(matches!(to_polar(&m, &[0.0], 1.0), Err(Error::ZeroVector)));
    }

    #[test]
    fn polar_roundtrip_nonnormal() {
        let m = Model::preset("nonnormal2d").unwrap();
        for x in [[3.0, -0.1], [1e-3, 2e-3], [40.0, 25.0]] {
            let p = to_polar(&m, &x, 4.0).unwrap();
            assert!((m.r(&p.xt) - 4.0).abs() <= 1e-12 * 4.0);
            let y = from_polar(&m, &p).unwrap();
            assert!(linalg::dist(&x, &y) <= 1e-10 * linalg::norm(&x));
        }
    }

    #[test]
    fn area_element_isotropic() {
        let m = Model::preset("isotropic2d").unwrap();
        let xt = project_to_ellipsoid(&m, &[0.6, 0.8], 3.0);
        assert_relative_eq!(polar_area_element(&m, &xt, 0.0), linalg::norm(&xt), max_relative = 1e-14);
    }

    #[test]
    fn scalar_volume_from_element() {
        // Volume of {D_s xt : s in [0, h]} is xt (e^h - 1).
        let m = Model::preset("salogni1d").unwrap();
        let h = 0.7;
        let e = adaptive(|s| polar_area_element(&m, &[1.0], s), 0.0, h, Tolerance::new(1e-14, 1e-14)).unwrap();
        assert!((e.value - (h.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn isotropic_patch_is_an_annular_sector() {
        // Q = I, B = -I: E_beta is the circle of radius sqrt(beta), D_s = e^s.
        let m = Model::preset("isotropic2d").unwrap();
        let patch = PolarPatch { beta: 4.0, theta: (0.2, 0.9), s: (-0.3, 0.1) };
        let want = 0.5 * 0.7 * 4.0 * ((0.2f64).exp() - (-0.6f64).exp());
        assert_relative_eq!(patch_volume(&m, &patch).unwrap(), want, max_relative = 1e-10);
    }

    #[test]
    fn large_rho_integral_keeps_precision() {
        let m = Model::preset("isotropic2d").unwrap();
        let xt = project_to_ellipsoid(&m, &[1.0, 0.0], 1.0);
        // Here the integrand is exp(r_max - r) times a drop with slope 2|y|^2, so the ratio tends to 1/2.
        assert_relative_eq!(check_rho_integral(&m, &xt, 20.0).unwrap().ratio(), 0.5, max_relative = 1e-6);
    }

    #[test]
    fn drop_is_accurate_for_tiny_steps() {
        let m = Model::preset("nonnormal2d").unwrap();
        let y = [2.0, 1.0];
        let d = r_drop(&m, &y, 1e-9).unwrap();
        assert_relative_eq!(d, 1e-9 * m.r_velocity(&y), max_relative = 1e-6);
    }

    #[test]
    fn annuli() {
        assert_eq!(dyadic_index(0.0, 1.0), 0);
        assert_eq!(dyadic_index(1.0, 1.0), 0);
        assert_eq!(dyadic_index(1.5, 1.0), 1);
        assert_eq!(dyadic_index(2.0, 1.0), 1);
        assert_eq!(dyadic_index(3.0, 1.0), 2);
        assert_eq!(dyadic_index(4.5, 1.0), 3);
        let m = Model::preset("isotropic2d").unwrap();
        assert_eq!(annulus_index(&m, 1.0, &[0.0, 0.0], &[0.1, 0.0]).unwrap(), None);
        let x = [0.0, 0.0];
        assert_eq!(annulus_index(&m, 1.0, &x, &[3.0, 0.0]).unwrap().unwrap().m, 2);
    }

    #[test]
    fn cap_of_circle() {
        let m = Model::preset("isotropic2d").unwrap();
        let y = project_to_ellipsoid(&m, &[1.0, 0.0], 9.0);
        let tube = Tube::new(&m, y, 0.5).unwrap();
        let iv = cap_intervals(&m, &tube);
        assert_eq!(iv.len(), 1);
        // Chord of length a on a circle of radius 3 subtends 2 asin(a / 6).
        let want = 4.0 * (0.5f64 / 6.0).asin();
        assert_relative_eq!(iv[0].1 - iv[0].0, want, max_relative = 1e-10);
    }

    #[test]
    fn isotropic_tube_closed_form() {
        // Q = I, B = -I: density pi e^{|x|^2}, so gamma_{-inf}(Z) = pi (cap angle) (e^beta - 1) / 2.
        let m = Model::preset("isotropic2d").unwrap();
        let beta = 9.0;
        let y = project_to_ellipsoid(&m, &[0.0, 1.0], beta);
        let tube = Tube::new(&m, y, 0.5).unwrap();
        let e = tube_measure(&m, &tube, TubeMethod::PolarQuadrature).unwrap();
        let angle = 4.0 * (0.5f64 / 6.0).asin();
        let want = PI * angle * 0.5 * (beta.exp() - 1.0);
        assert_relative_eq!(e.value, want, max_relative = 1e-8);
    }

    #[test]
    fn scalar_rho_integral_vanishes_at_zero() {
        let m = Model::preset("salogni1d").unwrap();
        let r = check_rho_integral(&m, &[1.0], 1e-6).unwrap();
        assert!(r.ratio() < 1e-5);
        let r2 = check_rho_integral(&m, &[1.0], 2.0).unwrap();
        assert!(r2.ratio().is_finite() && r2.ratio() > 0.0);
    }
}
