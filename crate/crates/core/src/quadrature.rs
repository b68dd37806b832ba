//! One-dimensional and tensor quadrature rules.

use crate::error::{Error, Result};
use std::collections::BinaryHeap;

/// Value together with an estimate of its absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss-Kronrod 7/15 on [a, b] for a vector-valued integrand.
fn gk15<F>(f: &F, a: f64, b: f64, dim: usize) -> (Vec<f64>, f64)
where
    F: Fn(f64) -> Vec<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let fc = f(c);
    for d in 0..dim {
        k[d] = WGK[7] * fc[d];
        g[d] = WG[3] * fc[d];
    }
    for i in 0..7 {
        let x = h * XGK[i];
        let f1 = f(c - x);
        let f2 = f(c + x);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            k[d] += WGK[i] * s;
            if i % 2 == 1 {
                g[d] += WG[i / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for d in 0..dim {
        k[d] *= h;
        g[d] *= h;
        err = err.max((k[d] - g[d]).abs());
    }
    (k, err)
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Tolerances for the adaptive integrators.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel, max_panels: 4000 }
    }
}

/// Globally adaptive Gauss-Kronrod integration of a vector-valued function.
/// The error is measured in the max norm over components.
pub fn adaptive_vec<F>(f: F, a: f64, b: f64, dim: usize, tol: Tolerance) -> Result<(Vec<f64>, f64)>
where
    F: Fn(f64) -> Vec<f64>,
{
    if a == b {
        return Ok((vec![0.0; dim], 0.0));
    }
    let (v, e) = gk15(&f, a, b, dim);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, error: e });
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for p in heap.iter() {
            for d in 0..dim {
                total[d] += p.value[d];
            }
            err += p.error;
        }
        if !err.is_finite() || total.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonIntegrable);
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = tol.abs.max(tol.rel * scale);
        if err <= target {
            return Ok((total, err));
        }
        if heap.len() >= tol.max_panels {
            return Err(Error::QuadratureNotConverged { estimate: err, tolerance: target });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::QuadratureNotConverged { estimate: err, tolerance: target });
        }
        let (v1, e1) = gk15(&f, worst.a, mid, dim);
        let (v2, e2) = gk15(&f, mid, worst.b, dim);
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
}

/// Scalar adaptive Gauss-Kronrod integration.
pub fn adaptive<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    let (v, e) = adaptive_vec(|x| vec![f(x)], a, b, 1, tol)?;
    Ok(Estimate { value: v[0], error: e })
}

/// Nested adaptive integration over an axis-aligned box.
pub fn adaptive_box<F>(f: &F, lo: &[f64], hi: &[f64], tol: Tolerance) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    let n = lo.len();
    let mut prefix = Vec::with_capacity(n);
    nested(f, lo, hi, tol, &mut prefix)
}

fn nested<F>(f: &F, lo: &[f64], hi: &[f64], tol: Tolerance, prefix: &mut Vec<f64>) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    let k = prefix.len();
    let n = lo.len();
    if k + 1 == n {
        let base = prefix.clone();
        return adaptive(
            |x| {
                let mut p = base.clone();
                p.push(x);
                f(&p)
            },
            lo[k],
            hi[k],
            tol,
        );
    }
    // Inner integrals are solved tighter so that the outer error estimate dominates.
    let inner = Tolerance { abs: tol.abs / (hi[k] - lo[k]).max(1.0) * 0.1, rel: tol.rel * 0.1, ..tol };
    let failure = std::cell::RefCell::new(None);
    let inner_err = std::cell::Cell::new(0.0f64);
    let base = prefix.clone();
    let out = adaptive(
        |x| {
            let mut p = base.clone();
            p.push(x);
            match nested(f, lo, hi, inner, &mut p) {
                Ok(e) => {
                    inner_err.set(inner_err.get().max(e.error));
                    e.value
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        lo[k],
        hi[k],
        tol,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(Estimate { value: out.value, error: out.error + inner_err.get() * (hi[k] - lo[k]) })
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Hermite nodes and weights for the weight `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Flattened tensor-product rule: `points[k*dim..(k+1)*dim]` with `weights[k]`.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Product of per-axis rules; products with relative weight below
    /// `prune` are dropped.
    pub fn product(axes: &[(Vec<f64>, Vec<f64>)], prune: f64) -> Self {
        let dim = axes.len();
        let wmax: f64 = axes
            .iter()
            .map(|(_, w)| w.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .product();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let total: usize = axes.iter().map(|(x, _)| x.len()).product();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let w: f64 = (0..dim).map(|d| axes[d].1[idx[d]]).product();
            if w.abs() >= prune * wmax {
                for d in 0..dim {
                    points.push(axes[d].0[idx[d]]);
                }
                weights.push(w);
            }
            for d in 0..dim {
                idx[d] += 1;
                if idx[d] < axes[d].0.len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        TensorRule { dim, points, weights }
    }

    /// Standard normal rule in `dim` dimensions built from Gauss-Hermite.
    pub fn standard_normal(dim: usize, nodes: usize) -> Self {
        let (x, w) = gauss_hermite(nodes);
        let s2 = std::f64::consts::SQRT_2;
        let norm = std::f64::consts::PI.sqrt();
        let axis: (Vec<f64>, Vec<f64>) = (x.iter().map(|v| v * s2).collect(), w.iter().map(|v| v / norm).collect());
        Self::product(&vec![axis; dim], 1e-30)
    }

    /// Composite Gauss-Legendre over a box: `panels` panels of `order` nodes per axis.
    pub fn composite_box(lo: &[f64], hi: &[f64], panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let axes: Vec<(Vec<f64>, Vec<f64>)> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let h = (b - a) / panels as f64;
                let mut xs = Vec::with_capacity(panels * order);
                let mut ws = Vec::with_capacity(panels * order);
                for p in 0..panels {
                    let c = a + (p as f64 + 0.5) * h;
                    for (x, w) in gx.iter().zip(&gw) {
                        xs.push(c + 0.5 * h * x);
                        ws.push(0.5 * h * w);
                    }
                }
                (xs, ws)
            })
            .collect();
        Self::product(&axes, 0.0)
    }
}

/// Composite Gauss-Legendre nodes on `[a, b]`: `panels` panels of 8 nodes.
pub fn composite_legendre(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let r = TensorRule::composite_box(&[a], &[b], panels.max(1), 8);
    (r.points, r.weights)
}

/// Lebesgue quadrature on the ball `B(center, radius)` in polar form:
/// composite Gauss-Legendre in the radius, trapezoid in the azimuth and
/// Gauss-Legendre in the polar cosine. `order` sets the radial node count.
pub fn ball_rule(center: &[f64], radius: f64, order: usize) -> Result<TensorRule> {
    let n = center.len();
    let panels = order.div_ceil(8).max(1);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match n {
        1 => {
            let (x, w) = composite_legendre(center[0] - radius, center[0] + radius, panels);
            return Ok(TensorRule { dim: 1, points: x, weights: w });
        }
        2 => {
            let (rho, wr) = composite_legendre(0.0, radius, panels);
            let m = 2 * panels * 8;
            let h = 2.0 * std::f64::consts::PI / m as f64;
            for (r, w) in rho.iter().zip(&wr) {
                for k in 0..m {
                    let th = (k as f64 + 0.5) * h;
                    points.push(center[0] + r * th.cos());
                    points.push(center[1] + r * th.sin());
                    weights.push(w * r * h);
                }
            }
        }
        3 => {
            let (rho, wr) = composite_legendre(0.0, radius, panels);
            let (cz, wz) = composite_legendre(-1.0, 1.0, panels);
            let m = 2 * panels * 8;
            let h = 2.0 * std::f64::consts::PI / m as f64;
            for (r, w) in rho.iter().zip(&wr) {
                for (c, wc) in cz.iter().zip(&wz) {
                    let sn = (1.0 - c * c).max(0.0).sqrt();
                    for k in 0..m {
                        let ph = (k as f64 + 0.5) * h;
                        points.push(center[0] + r * sn * ph.cos());
                        points.push(center[1] + r * sn * ph.sin());
                        points.push(center[2] + r * c);
                        weights.push(w * r * r * wc * h);
                    }
                }
            }
        }
        _ => return Err(Error::InvalidArgument(format!("ball rule supports n <= 3, got {n}"))),
    }
    Ok(TensorRule { dim: n, points, weights })
}
