//! The maximal operator `sup_t H_t f`, its local/global split, level-set
//! measures and the experiments built on them.

use crate::error::{Error, Result};
use crate::geometry::{dyadic_index, project_to_ellipsoid};
use crate::kernels::{self, uniform_ball, TimeSlice};
use crate::linalg;
use crate::model::{Model, MAX_DIM};
use crate::par;
use crate::quadrature::{ball_rule, gauss_legendre, TensorRule};
use crate::semigroup::TestFunction;
use rand::Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Local,
    Global,
}

/// `1 / (1 + |x|)`.
pub fn local_radius(x: &[f64]) -> f64 {
    1.0 / (1.0 + linalg::norm(x))
}

/// Ties go to the local region.
pub fn region_of(x: &[f64], u: &[f64]) -> Region {
    if linalg::dist(x, u) <= local_radius(x) {
        Region::Local
    } else {
        Region::Global
    }
}

/// `lo, lo r, lo r^2, ...` up to `hi`, with `hi` itself as the last point.
pub fn geometric_grid(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && ratio > 1.0);
    let mut out = vec![lo];
    let mut t = lo * ratio;
    while t < hi * (1.0 - 1e-12) {
        out.push(t);
        t *= ratio;
    }
    if hi > lo {
        out.push(hi);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub ratio: f64,
    /// Radial node count of the rule over the support of `f`.
    pub source_order: usize,
}

impl Default for MaximalConfig {
    fn default() -> Self {
        MaximalConfig { t_min: 1e-4, t_max: 50.0, ratio: 1.1, source_order: 8 }
    }
}

impl MaximalConfig {
    pub fn minus_grid(&self) -> Vec<f64> {
        geometric_grid(self.t_min, 1.0, self.ratio)
    }

    /// Times in `(1, t_max]`.
    pub fn plus_grid(&self) -> Vec<f64> {
        geometric_grid(1.0, self.t_max, self.ratio).into_iter().skip(1).collect()
    }

    pub fn refined(&self) -> Self {
        MaximalConfig { ratio: self.ratio.sqrt(), ..self.clone() }
    }
}

/// Quadrature nodes of `f du` over the support of `f`.
#[derive(Debug, Clone)]
struct Source {
    dim: usize,
    points: Vec<f64>,
    log_w: Vec<f64>,
}

impl Source {
    fn new(f: &TestFunction, order: usize) -> Result<Self> {
        if !f.is_nonnegative() {
            return Err(Error::InvalidArgument("maximal function needs f >= 0".into()));
        }
        let (c, r) = f
            .support_ball()
            .ok_or_else(|| Error::InvalidArgument("maximal function needs compact support".into()))?;
        let rule = ball_rule(&c, r, order)?;
        Ok(Self::from_rule(&rule, |u| f.eval(u)))
    }

    fn from_rule(rule: &TensorRule, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut points = Vec::new();
        let mut log_w = Vec::new();
        for k in 0..rule.len() {
            let p = rule.point(k);
            let w = rule.weights[k] * f(p);
            if w > 0.0 {
                points.extend_from_slice(p);
                log_w.push(w.ln());
            }
        }
        Source { dim: rule.dim, points, log_w }
    }

    fn len(&self) -> usize {
        self.log_w.len()
    }

    fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }
}

/// Per-time data: `M_t^{UO}(x, u_j) = exp(c_j - (x - m_j)^T Q_t^{-1} (x - m_j) / 2)`.
#[derive(Debug, Clone)]
struct TimeTable {
    t: f64,
    q_inv: Vec<f64>,
    means: Vec<f64>,
    consts: Vec<f64>,
    /// `D_{-t} u_j` is not needed; annuli use `D_{-t} x`.
    d_minus: Vec<f64>,
}

impl TimeTable {
    fn new(model: &Model, src: &Source, t: f64) -> Result<Self> {
        let slice = TimeSlice::new(model, t)?;
        let n = model.dim;
        let log_norm = -0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * slice.log_det_q_t + t * model.trace_b;
        let mut means = vec![0.0; src.len() * n];
        for j in 0..src.len() {
            linalg::matvec(slice.exp_tb.as_slice(), n, src.point(j), &mut means[j * n..(j + 1) * n]);
        }
        Ok(TimeTable {
            t,
            q_inv: slice.q_t_inv.as_slice().to_vec(),
            means,
            consts: src.log_w.iter().map(|w| w + log_norm).collect(),
            d_minus: slice.d_minus_t.as_slice().to_vec(),
        })
    }

    #[inline]
    fn term(&self, n: usize, j: usize, x: &[f64]) -> f64 {
        let m = &self.means[j * n..(j + 1) * n];
        let mut v = [0.0; MAX_DIM];
        for i in 0..n {
            v[i] = x[i] - m[i];
        }
        (self.consts[j] - 0.5 * linalg::quad_form(&self.q_inv, n, &v[..n])).exp()
    }
}

/// Values of the four parts `H_*^{-,L}, H_*^{-,G}, H_*^{+,L}, H_*^{+,G}` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitMaximalValue {
    pub minus_local: f64,
    pub minus_global: f64,
    pub plus_local: f64,
    pub plus_global: f64,
}

impl SplitMaximalValue {
    pub fn total(&self) -> f64 {
        self.minus_local + self.minus_global + self.plus_local + self.plus_global
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaximalValue {
    pub split: SplitMaximalValue,
    /// `max_{t <= 1} H_t f` and `max_{t > 1} H_t f` over the grids.
    pub sup_minus: f64,
    pub sup_plus: f64,
}

impl MaximalValue {
    pub fn full(&self) -> f64 {
        self.sup_minus.max(self.sup_plus)
    }
}

/// `H_t f` for a fixed nonnegative, compactly supported `f` on fixed time grids.
#[derive(Debug, Clone)]
pub struct MaximalOperator {
    dim: usize,
    source: Source,
    minus: Vec<TimeTable>,
    plus: Vec<TimeTable>,
}

impl MaximalOperator {
    pub fn new(model: &Model, f: &TestFunction, config: &MaximalConfig) -> Result<Self> {
        Self::with_grids(model, f, &config.minus_grid(), &config.plus_grid(), config.source_order)
    }

    pub fn with_grids(model: &Model, f: &TestFunction, minus: &[f64], plus: &[f64], order: usize) -> Result<Self> {
        let source = Source::new(f, order)?;
        if minus.iter().any(|t| *t > 1.0) || plus.iter().any(|t| *t <= 1.0) {
            return Err(Error::InvalidArgument("time grids must split at t = 1".into()));
        }
        let build = |ts: &[f64]| -> Result<Vec<TimeTable>> {
            par::try_map_indexed(ts.len(), |k| TimeTable::new(model, &source, ts[k]))
        };
        Ok(MaximalOperator { dim: model.dim, minus: build(minus)?, plus: build(plus)?, source })
    }

    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    fn local_mask(&self, x: &[f64]) -> Vec<bool> {
        let r = local_radius(x);
        (0..self.source.len()).map(|j| linalg::dist(x, self.source.point(j)) <= r).collect()
    }

    fn sweep(&self, tables: &[TimeTable], x: &[f64], mask: &[bool]) -> (f64, f64, f64) {
        let n = self.dim;
        let (mut best_l, mut best_g, mut best) = (0.0f64, 0.0f64, 0.0f64);
        for tab in tables {
            let (mut l, mut g) = (0.0, 0.0);
            for (j, local) in mask.iter().enumerate() {
                let v = tab.term(n, j, x);
                if *local {
                    l += v;
                } else {
                    g += v;
                }
            }
            best_l = best_l.max(l);
            best_g = best_g.max(g);
            best = best.max(l + g);
        }
        (best_l, best_g, best)
    }

    pub fn evaluate(&self, x: &[f64]) -> MaximalValue {
        let mask = self.local_mask(x);
        let (ml, mg, sm) = self.sweep(&self.minus, x, &mask);
        let (pl, pg, sp) = self.sweep(&self.plus, x, &mask);
        MaximalValue {
            split: SplitMaximalValue { minus_local: ml, minus_global: mg, plus_local: pl, plus_global: pg },
            sup_minus: sm,
            sup_plus: sp,
        }
    }

    /// `H_t f(x)` at every time of both grids, in grid order.
    pub fn profile(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let n = self.dim;
        self.minus
            .iter()
            .chain(&self.plus)
            .map(|tab| (tab.t, (0..self.source.len()).map(|j| tab.term(n, j, x)).sum()))
            .collect()
    }

    /// Largest `int K_t(x, u) 1_{T_t^m}(x, u) f(u) d gamma_{-inf}(u)` over the
    /// short-time grid, with the maximizing time.
    pub fn annulus_sup(&self, x: &[f64], m: u32) -> (f64, f64) {
        let n = self.dim;
        let mask = self.local_mask(x);
        let mut best = (0.0, self.minus.first().map_or(1.0, |t| t.t));
        let mut c = [0.0; MAX_DIM];
        for tab in &self.minus {
            linalg::matvec(&tab.d_minus, n, x, &mut c[..n]);
            let rho = tab.t.sqrt().min(1.0);
            let mut s = 0.0;
            for (j, local) in mask.iter().enumerate() {
                if *local {
                    continue;
                }
                let u = self.source.point(j);
                if dyadic_index(linalg::dist(u, &c[..n]), rho) == m {
                    s += tab.term(n, j, x);
                }
            }
            if s > best.0 {
                best = (s, tab.t);
            }
        }
        best
    }
}

pub fn split_maximal(model: &Model, f: &TestFunction, x: &[f64], config: &MaximalConfig) -> Result<SplitMaximalValue> {
    Ok(MaximalOperator::new(model, f, config)?.evaluate(x).split)
}

/// Largest relative change of the grid supremum when the time grids are refined.
pub fn grid_refinement_change(model: &Model, f: &TestFunction, config: &MaximalConfig, points: &[Vec<f64>]) -> Result<f64> {
    let a = MaximalOperator::new(model, f, config)?;
    let b = MaximalOperator::new(model, f, &config.refined())?;
    let mut worst = 0.0f64;
    for x in points {
        let (va, vb) = (a.evaluate(x).full(), b.evaluate(x).full());
        if vb > 0.0 {
            worst = worst.max((va - vb).abs() / vb);
        }
    }
    if worst > 0.02 {
        return Err(Error::GridTooCoarse { change: worst });
    }
    Ok(worst)
}

/// Log values of a function on the nodes of a uniform grid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Cells per axis (even, so the every-other-node grid exists).
    pub cells: usize,
    pub log_values: Vec<f64>,
}

const LOG_FLOOR: f64 = -700.0;

impl NodeField {
    pub fn node_count(dim: usize, cells: usize) -> usize {
        (cells + 1).pow(dim as u32)
    }

    pub fn node(lo: &[f64], hi: &[f64], cells: usize, mut k: usize) -> Vec<f64> {
        let n = lo.len();
        let mut x = vec![0.0; n];
        for i in 0..n {
            let j = k % (cells + 1);
            k /= cells + 1;
            x[i] = lo[i] + (hi[i] - lo[i]) * j as f64 / cells as f64;
        }
        x
    }

    pub fn tabulate<F>(lo: &[f64], hi: &[f64], cells: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if cells < 2 || cells % 2 != 0 || lo.len() != hi.len() {
            return Err(Error::InvalidArgument("node grid needs an even cell count".into()));
        }
        let n = lo.len();
        let log_values = par::map_indexed(Self::node_count(n, cells), |k| {
            let v = f(&Self::node(lo, hi, cells, k));
            if v > 0.0 {
                v.ln().max(LOG_FLOOR)
            } else {
                LOG_FLOOR
            }
        });
        Ok(NodeField { dim: n, lo: lo.to_vec(), hi: hi.to_vec(), cells, log_values })
    }

    pub fn from_log_values(lo: &[f64], hi: &[f64], cells: usize, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != Self::node_count(lo.len(), cells) || cells % 2 != 0 {
            return Err(Error::Dimension("field size does not match grid".into()));
        }
        Ok(NodeField { dim: lo.len(), lo: lo.to_vec(), hi: hi.to_vec(), cells, log_values })
    }

    fn at(&self, idx: &[usize]) -> f64 {
        let mut k = 0;
        for i in (0..self.dim).rev() {
            k = k * (self.cells + 1) + idx[i];
        }
        self.log_values[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetReport {
    pub alpha: f64,
    pub measure: f64,
    /// Same measure from every other node, and the relative change.
    pub coarse_measure: f64,
    pub change: f64,
    pub alpha_scaled: f64,
    pub alpha_log_scaled: f64,
    pub touches_boundary: bool,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub cells: usize,
}

const SUBCELLS: usize = 8;

/// `gamma_{-inf}` of `{field > alpha}` with cells of `stride` nodes. Cells
/// whose corners all lie on one side are taken whole; straddling cells are
/// split into subcells classified by multilinear interpolation of the log field.
fn field_measure(model: &Model, field: &NodeField, stride: usize, alpha: f64) -> (f64, bool) {
    let n = field.dim;
    let cells = field.cells / stride;
    let la = alpha.ln();
    let h: Vec<f64> = (0..n).map(|i| (field.hi[i] - field.lo[i]) / cells as f64).collect();
    let (gx, gw) = gauss_legendre(3);
    let norm = (0.5 * n as f64 * (2.0 * PI).ln() + 0.5 * model.log_det_q_inf).exp();
    let corners = 1usize << n;
    let total_cells = cells.pow(n as u32);
    let parts = par::map_indexed(total_cells, |c| {
        let mut idx = [0usize; MAX_DIM];
        let mut k = c;
        for i in 0..n {
            idx[i] = k % cells;
            k /= cells;
        }
        let mut vals = [0.0; 1 << 3];
        let mut vals_big = Vec::new();
        let corner_vals: &mut [f64] = if corners <= 8 {
            &mut vals[..corners]
        } else {
            vals_big.resize(corners, 0.0);
            &mut vals_big
        };
        let mut above = 0;
        let mut ni = [0usize; MAX_DIM];
        for (b, cv) in corner_vals.iter_mut().enumerate() {
            for i in 0..n {
                ni[i] = (idx[i] + ((b >> i) & 1)) * stride;
            }
            *cv = field.at(&ni[..n]);
            if *cv > la {
                above += 1;
            }
        }
        let on_boundary = (0..n).any(|i| idx[i] == 0 || idx[i] == cells - 1);
        if above == 0 {
            return (0.0, false);
        }
        let lo: Vec<f64> = (0..n).map(|i| field.lo[i] + idx[i] as f64 * h[i]).collect();
        let mut x = [0.0; MAX_DIM];
        let value = if above == corners {
            // Tensor 3-point Gauss-Legendre of e^{R}.
            let mut s = 0.0;
            for q in 0..3usize.pow(n as u32) {
                let mut w = 1.0;
                let mut r = q;
                for i in 0..n {
                    let j = r % 3;
                    r /= 3;
                    x[i] = lo[i] + 0.5 * h[i] * (1.0 + gx[j]);
                    w *= 0.5 * h[i] * gw[j];
                }
                s += w * model.r(&x[..n]).exp();
            }
            s
        } else {
            let sub_vol: f64 = h.iter().map(|v| v / SUBCELLS as f64).product();
            let mut s = 0.0;
            let mut frac = [0.0; MAX_DIM];
            for q in 0..SUBCELLS.pow(n as u32) {
                let mut r = q;
                for i in 0..n {
                    let j = r % SUBCELLS;
                    r /= SUBCELLS;
                    frac[i] = (j as f64 + 0.5) / SUBCELLS as f64;
                    x[i] = lo[i] + frac[i] * h[i];
                }
                let mut interp = 0.0;
                for (b, cv) in corner_vals.iter().enumerate() {
                    let mut w = 1.0;
                    for i in 0..n {
                        w *= if (b >> i) & 1 == 1 { frac[i] } else { 1.0 - frac[i] };
                    }
                    interp += w * cv;
                }
                if interp > la {
                    s += sub_vol * model.r(&x[..n]).exp();
                }
            }
            s
        };
        (value, on_boundary)
    });
    let mut total = 0.0;
    let mut touches = false;
    for (v, b) in parts {
        total += v;
        touches |= b;
    }
    (norm * total, touches)
}

/// Level-set measure from a tabulated field, checked against the coarse grid.
pub fn level_set_from_field(model: &Model, field: &NodeField, alpha: f64) -> Result<LevelSetReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    if field.dim != model.dim {
        return Err(Error::Dimension("field and model dimensions differ".into()));
    }
    let (fine, touches) = field_measure(model, field, 1, alpha);
    let (coarse, _) = field_measure(model, field, 2, alpha);
    let change = if fine > 0.0 {
        (fine - coarse).abs() / fine
    } else if coarse > 0.0 {
        1.0
    } else {
        0.0
    };
    if change > 0.05 {
        return Err(Error::ResolutionTooCoarse { change });
    }
    let log_factor = (1.0 / alpha).ln().max(0.0).sqrt();
    Ok(LevelSetReport {
        alpha,
        measure: fine,
        coarse_measure: coarse,
        change,
        alpha_scaled: alpha * fine,
        alpha_log_scaled: alpha * log_factor * fine,
        touches_boundary: touches,
        box_lo: field.lo.clone(),
        box_hi: field.hi.clone(),
        cells: field.cells,
    })
}

/// `gamma_{-inf}{x in box : evaluator(x) > alpha}`.
pub fn level_set_measure<F>(model: &Model, evaluator: F, alpha: f64, lo: &[f64], hi: &[f64], cells: usize) -> Result<LevelSetReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let field = NodeField::tabulate(lo, hi, cells, evaluator)?;
    level_set_from_field(model, &field, alpha)
}

/// `gamma_{-inf}{R < rho} = (2 pi)^{n/2} det(Q_inf) * 2 pi (e^rho - 1)` for `n = 2`.
pub fn small_ball_measure(model: &Model, rho: f64) -> Result<f64> {
    if model.dim != 2 {
        return Err(Error::InvalidArgument("closed form is for n = 2".into()));
    }
    Ok(4.0 * PI * PI * model.log_det_q_inf.exp() * rho.exp_m1())
}

/// Bounding box of `{R <= 5/4 log(1/alpha_min) + margin}`.
pub fn annulus_box(model: &Model, alpha_min: f64, margin: f64) -> (Vec<f64>, Vec<f64>) {
    let rho = 1.25 * (1.0 / alpha_min).ln() + margin;
    let hi: Vec<f64> = (0..model.dim).map(|i| (2.0 * rho * model.q_inf[(i, i)]).sqrt()).collect();
    (hi.iter().map(|v| -v).collect(), hi)
}

/// `per_decade` log-spaced levels from `hi` down to `lo`, both included.
pub fn alpha_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let steps = ((decades * per_decade as f64).round() as usize).max(1);
    let (a, b) = (hi.log10(), lo.log10());
    (0..=steps).map(|k| 10f64.powf(a + (b - a) * k as f64 / steps as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetConfig {
    pub cells: usize,
    /// Margin in units of `R` around the outer annulus.
    pub margin: f64,
}

impl Default for LevelSetConfig {
    fn default() -> Self {
        LevelSetConfig { cells: 160, margin: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub maximal: MaximalConfig,
    pub level: LevelSetConfig,
    /// Radius of the balls standing in for point masses.
    pub point_mass_radius: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { maximal: MaximalConfig::default(), level: LevelSetConfig::default(), point_mass_radius: 0.05 }
    }
}

/// Maximal-function fields of one `f` over the level-set box.
#[derive(Debug, Clone)]
pub struct MaximalField {
    /// Sum of the four split parts.
    pub total: NodeField,
    /// Full grid supremum over all times.
    pub full: NodeField,
    /// Supremum over `t > 1`.
    pub plus: NodeField,
    /// `H^{+,L} + H^{+,G} + H^{-,G}`.
    pub nonlocal: NodeField,
    /// Largest `H^{+,L} + H^{+,G} + H^{-,G}` over the nodes.
    pub nonlocal_constant: f64,
    /// Largest `full / total`; at most one by domination.
    pub domination_ratio: f64,
    /// Relative change of the supremum under time-grid refinement at probe points.
    pub grid_change: f64,
}

pub fn tabulate_maximal(model: &Model, f: &TestFunction, lo: &[f64], hi: &[f64], config: &ExperimentConfig) -> Result<MaximalField> {
    let op = MaximalOperator::new(model, f, &config.maximal)?;
    let cells = config.level.cells;
    if cells % 2 != 0 {
        return Err(Error::InvalidArgument("cells must be even".into()));
    }
    if let Some((c, r)) = f.support_ball() {
        if (0..model.dim).any(|i| c[i] - r < lo[i] || c[i] + r > hi[i]) {
            return Err(Error::BallEscapesBox(format!("support of f leaves the box around {c:?}")));
        }
    }
    let vals = par::map_indexed(NodeField::node_count(model.dim, cells), |k| op.evaluate(&NodeField::node(lo, hi, cells, k)));
    let ln = |v: f64| if v > 0.0 { v.ln().max(LOG_FLOOR) } else { LOG_FLOOR };
    let total = NodeField::from_log_values(lo, hi, cells, vals.iter().map(|v| ln(v.split.total())).collect())?;
    let full = NodeField::from_log_values(lo, hi, cells, vals.iter().map(|v| ln(v.full())).collect())?;
    let plus = NodeField::from_log_values(lo, hi, cells, vals.iter().map(|v| ln(v.sup_plus)).collect())?;
    let nonlocal_of = |v: &MaximalValue| v.split.plus_local + v.split.plus_global + v.split.minus_global;
    let nonlocal = NodeField::from_log_values(lo, hi, cells, vals.iter().map(|v| ln(nonlocal_of(v))).collect())?;
    let nonlocal_constant = vals.iter().map(nonlocal_of).fold(0.0, f64::max);
    let domination_ratio = vals
        .iter()
        .filter(|v| v.split.total() > 0.0)
        .map(|v| v.full() / v.split.total())
        .fold(0.0, f64::max);
    // Probe the time grid near the level-set boundaries.
    let mut probes = Vec::new();
    for level in [2.0, 4.0, 7.0] {
        for k in 0..4 {
            let th = 2.0 * PI * k as f64 / 4.0 + 0.3;
            let dir: Vec<f64> = (0..model.dim).map(|i| if i == 0 { th.cos() } else if i == 1 { th.sin() } else { 0.3 }).collect();
            probes.push(project_to_ellipsoid(model, &dir, level));
        }
    }
    let grid_change = grid_refinement_change(model, f, &config.maximal, &probes)?;
    Ok(MaximalField { total, full, plus, nonlocal, nonlocal_constant, domination_ratio, grid_change })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakTypeRow {
    pub center: usize,
    pub alpha: f64,
    pub measure: f64,
    pub statistic: f64,
    pub resolution_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakTypeReport {
    pub rows: Vec<WeakTypeRow>,
    /// Largest `alpha gamma{H_* f > alpha}` over all rows.
    pub envelope: f64,
    /// Largest max/min ratio of the statistic over alpha, per center.
    pub stability: f64,
    pub nonlocal_constant: f64,
    /// Measure of the level set of the non-local parts just above their maximum.
    pub above_constant_measure: f64,
    pub grid_change: f64,
    pub touches_boundary: bool,
}

pub fn weak_type_experiment(model: &Model, centers: &[Vec<f64>], alphas: &[f64], config: &ExperimentConfig) -> Result<WeakTypeReport> {
    let alpha_min = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let (lo, hi) = annulus_box(model, alpha_min, config.level.margin);
    let mut rows = Vec::new();
    let mut report = WeakTypeReport {
        rows: vec![],
        envelope: 0.0,
        stability: 1.0,
        nonlocal_constant: 0.0,
        above_constant_measure: 0.0,
        grid_change: 0.0,
        touches_boundary: false,
    };
    for (ci, c) in centers.iter().enumerate() {
        let f = TestFunction::normalized_indicator(model, c.clone(), config.point_mass_radius)?;
        let field = tabulate_maximal(model, &f, &lo, &hi, config)?;
        report.nonlocal_constant = report.nonlocal_constant.max(field.nonlocal_constant);
        report.grid_change = report.grid_change.max(field.grid_change);
        let (mut smin, mut smax) = (f64::INFINITY, 0.0f64);
        for &a in alphas {
            let ls = level_set_from_field(model, &field.total, a)?;
            report.touches_boundary |= ls.touches_boundary;
            smin = smin.min(ls.alpha_scaled);
            smax = smax.max(ls.alpha_scaled);
            rows.push(WeakTypeRow { center: ci, alpha: a, measure: ls.measure, statistic: ls.alpha_scaled, resolution_change: ls.change });
        }
        report.envelope = report.envelope.max(smax);
        report.stability = report.stability.max(smax / smin);
        let above = level_set_from_field(model, &field.nonlocal, 1.01 * field.nonlocal_constant)?;
        report.above_constant_measure = report.above_constant_measure.max(above.measure);
    }
    report.rows = rows;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedRow {
    pub alpha: f64,
    /// `gamma_{-inf}{sup_{t>1} H_t f > alpha}`.
    pub measure: f64,
    pub alpha_scaled: f64,
    pub alpha_log_scaled: f64,
    /// Measure of the full maximal level set at the same `alpha`.
    pub full_measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedReport {
    pub rows: Vec<EnhancedRow>,
    /// Largest `alpha sqrt(log 1/alpha) measure`.
    pub log_envelope: f64,
    /// Ratio of the plain statistic at the smallest and largest alpha with a
    /// non-empty level set.
    pub plain_growth: f64,
    pub grid_change: f64,
    pub touches_boundary: bool,
}

pub fn enhanced_experiment(model: &Model, f: &TestFunction, alphas: &[f64], config: &ExperimentConfig) -> Result<EnhancedReport> {
    let lim = (-2.0f64).exp();
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < lim)) {
        return Err(Error::InvalidArgument("levels must lie in (0, e^-2)".into()));
    }
    let a_min = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_max = alphas.iter().cloned().fold(0.0, f64::max);
    if a_max / a_min < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InvalidArgument("levels must span two decades".into()));
    }
    let (lo, hi) = annulus_box(model, a_min, config.level.margin);
    let field = tabulate_maximal(model, f, &lo, &hi, config)?;
    let mut rows = Vec::new();
    let mut touches = false;
    for &a in alphas {
        let ls = level_set_from_field(model, &field.plus, a)?;
        let full = level_set_from_field(model, &field.full, a)?;
        touches |= ls.touches_boundary;
        rows.push(EnhancedRow {
            alpha: a,
            measure: ls.measure,
            alpha_scaled: ls.alpha_scaled,
            alpha_log_scaled: ls.alpha_log_scaled,
            full_measure: full.measure,
        });
    }
    let log_envelope = rows.iter().map(|r| r.alpha_log_scaled).fold(0.0, f64::max);
    let positive = || rows.iter().filter(|r| r.alpha_scaled > 0.0);
    let plain_growth = match (
        positive().min_by(|a, b| a.alpha.total_cmp(&b.alpha)),
        positive().max_by(|a, b| a.alpha.total_cmp(&b.alpha)),
    ) {
        (Some(lo), Some(hi)) => lo.alpha_scaled / hi.alpha_scaled,
        _ => 0.0,
    };
    Ok(EnhancedReport { rows, log_envelope, plain_growth, grid_change: field.grid_change, touches_boundary: touches })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessRow {
    pub alpha: f64,
    /// `R(z) = log(1/alpha) - A`.
    pub r_z: f64,
    /// `min_{x in B*} H_2 f(x) e^{R(z)}`.
    pub kernel_constant: f64,
    pub b_star_measure: f64,
    /// `gamma_{-inf}(B*) sqrt(R(z)) / e^{R(z)}`.
    pub b_star_ratio: f64,
    /// `gamma_{-inf}{x in B* : H_2 f(x) > alpha}` and its scaled form.
    pub witness_measure: f64,
    pub witness_statistic: f64,
    /// `max |D_{-2} x - u|` over sampled `x in B_1`, `u in B_2`.
    pub distance_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub offset: f64,
    /// `log(1 / kernel_constant)`: offsets above it make `B*` part of the level set.
    pub required_offset: f64,
    pub rows: Vec<SharpnessRow>,
    pub kernel_constant: f64,
    /// Max over min of `b_star_ratio` along the levels.
    pub ratio_spread: f64,
    pub witness_lower: f64,
    pub distance_constant: f64,
}

/// Quadrature of `e^{R(x) - R(z)} dx` over `B* = {x in B(z, 1) : R(x) < R(z)}`.
fn b_star_rule(model: &Model, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.dim;
    let rz = model.r(z);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if n == 2 {
        // Along x = z + r w, R(x) - R(z) = r g + r^2 h / 2 with g = w.Q^{-1}z, h = w.Q^{-1}w.
        let m = 512;
        let (gx, gw) = gauss_legendre(16);
        let qi = model.q_inf_inv.as_slice();
        let mut gz = [0.0; 2];
        linalg::matvec(qi, 2, z, &mut gz);
        for k in 0..m {
            let th = 2.0 * PI * (k as f64 + 0.5) / m as f64;
            let w = [th.cos(), th.sin()];
            let g = w[0] * gz[0] + w[1] * gz[1];
            if g >= 0.0 {
                continue;
            }
            let h = linalg::quad_form(qi, 2, &w);
            let rmax = (-2.0 * g / h).min(1.0);
            for (xi, wi) in gx.iter().zip(&gw) {
                let r = 0.5 * rmax * (1.0 + xi);
                points.extend_from_slice(&[z[0] + r * w[0], z[1] + r * w[1]]);
                weights.push(2.0 * PI / m as f64 * 0.5 * rmax * wi * r * (r * g + 0.5 * r * r * h).exp());
            }
        }
    } else {
        let rule = ball_rule(z, 1.0, 64)?;
        for k in 0..rule.len() {
            let p = rule.point(k);
            let d = model.r(p) - rz;
            if d < 0.0 {
                points.extend_from_slice(p);
                weights.push(rule.weights[k] * d.exp());
            }
        }
    }
    Ok((points, weights))
}

/// Default offset `A`; the fitted kernel constants of the presets need `A > 9`.
pub const SHARPNESS_OFFSET: f64 = 10.0;

pub fn sharpness_experiment(model: &Model, alphas: &[f64], offset: f64, seed: u64) -> Result<SharpnessReport> {
    let n = model.dim;
    let norm = (0.5 * n as f64 * (2.0 * PI).ln() + 0.5 * model.log_det_q_inf).exp();
    let dir: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let slice = TimeSlice::new(model, 2.0)?;
    let mut rows = Vec::new();
    for (ai, &alpha) in alphas.iter().enumerate() {
        let r_z = (1.0 / alpha).ln() - offset;
        if !(r_z > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} too large for offset {offset}")));
        }
        let z = project_to_ellipsoid(model, &dir, r_z);
        let mut c2 = vec![0.0; n];
        linalg::matvec(slice.d_minus_t.as_slice(), n, &z, &mut c2);
        let f = TestFunction::normalized_indicator(model, c2.clone(), 1.0)?;
        let src = Source::new(&f, 16)?;
        let table = TimeTable::new(model, &src, 2.0)?;
        let (pts, wts) = b_star_rule(model, &z)?;
        let h2: Vec<f64> = par::map_indexed(wts.len(), |k| {
            let x = &pts[k * n..(k + 1) * n];
            (0..src.len()).map(|j| table.term(n, j, x)).sum::<f64>()
        });
        let scale = norm * r_z.exp();
        let b_star: f64 = scale * wts.iter().sum::<f64>();
        let witness: f64 = scale * wts.iter().zip(&h2).filter(|(_, h)| **h > alpha).map(|(w, _)| w).sum::<f64>() + 0.0;
        let kernel_constant = h2.iter().cloned().fold(f64::INFINITY, f64::min) * r_z.exp();
        let mut rng = par::stream_rng(seed, ai as u64);
        let mut dmax = 0.0f64;
        let mut dx = vec![0.0; n];
        for _ in 0..4000 {
            let x: Vec<f64> = uniform_ball(&mut rng, n, 1.0).iter().zip(&z).map(|(a, b)| a + b).collect();
            let u: Vec<f64> = uniform_ball(&mut rng, n, 1.0).iter().zip(&c2).map(|(a, b)| a + b).collect();
            linalg::matvec(slice.d_minus_t.as_slice(), n, &x, &mut dx);
            dmax = dmax.max(linalg::dist(&dx, &u));
        }
        rows.push(SharpnessRow {
            alpha,
            r_z,
            kernel_constant,
            b_star_measure: b_star,
            b_star_ratio: b_star * r_z.sqrt() / r_z.exp(),
            witness_measure: witness,
            witness_statistic: alpha * (1.0 / alpha).ln().sqrt() * witness,
            distance_constant: dmax,
        });
    }
    let fold_min = |g: fn(&SharpnessRow) -> f64| rows.iter().map(g).fold(f64::INFINITY, f64::min);
    let fold_max = |g: fn(&SharpnessRow) -> f64| rows.iter().map(g).fold(0.0, f64::max);
    let kernel_constant = fold_min(|r| r.kernel_constant);
    Ok(SharpnessReport {
        offset,
        required_offset: (1.0 / kernel_constant).ln(),
        kernel_constant,
        ratio_spread: fold_max(|r| r.b_star_ratio) / fold_min(|r| r.b_star_ratio),
        witness_lower: fold_min(|r| r.witness_statistic),
        distance_constant: fold_max(|r| r.distance_constant),
        rows,
    })
}

/// Fitted constants of the local/global estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGlobalReport {
    /// `max K_t(x, u) e^{R(x)} (1 + |x|)^{-n}` over global pairs, `t <= 1`.
    pub global_kernel_constant: f64,
    /// `max |R(u) - R(x)|` over local pairs.
    pub local_r_oscillation: f64,
    /// `log C` and `c` with `K_t e^{R(x)} t^{n/2} <= C exp(-c |x - u|^2 / t)` on local pairs.
    pub local_heat_log_constant: f64,
    pub local_heat_exponent: f64,
    /// `max K_t(x, u) / alpha` over global pairs with `R(x) > 5/4 log(1/alpha)`.
    pub outer_annulus_constant: f64,
    pub alpha: f64,
    pub sample_count: usize,
    pub seed: u64,
}

pub fn fit_local_global(model: &Model, alpha: f64, sample_count: usize, seed: u64) -> Result<LocalGlobalReport> {
    let n = model.dim;
    let nf = n as f64;
    let mut rng = par::stream_rng(seed, 0);
    let mut global_c = 0.0f64;
    let mut osc = 0.0f64;
    let mut local: Vec<(f64, f64)> = Vec::new();
    let mut outer = 0.0f64;
    let outer_level = 1.25 * (1.0 / alpha).ln();
    for _ in 0..sample_count {
        let t = 10f64.powf(rng.random_range(-3.0..0.0));
        let slice = TimeSlice::new(model, t)?;
        let x = uniform_ball(&mut rng, n, 4.0);
        let rl = local_radius(&x);
        // Local pair.
        let u: Vec<f64> = uniform_ball(&mut rng, n, rl).iter().zip(&x).map(|(a, b)| a + b).collect();
        let k = slice.log_kernel_uo(&x, &u);
        osc = osc.max((model.r(&u) - model.r(&x)).abs());
        local.push((k + model.r(&x) + 0.5 * nf * t.ln(), linalg::dist(&x, &u).powi(2) / t));
        // Global pair near the flow line, where the kernel is largest.
        let mut c = vec![0.0; n];
        linalg::matvec(slice.d_minus_t.as_slice(), n, &x, &mut c);
        let g: Vec<f64> = uniform_ball(&mut rng, n, 2.0 * t.sqrt()).iter().zip(&c).map(|(a, b)| a + b).collect();
        if region_of(&x, &g) == Region::Global {
            let k = slice.log_kernel_uo(&x, &g);
            global_c = global_c.max((k + model.r(&x) - nf * (1.0 + linalg::norm(&x)).ln()).exp());
        }
        // Global pair with x beyond the outer annulus.
        let dir = crate::growth::random_unit(&mut rng, n);
        let xo = project_to_ellipsoid(model, &dir, outer_level + rng.random_range(0.0..3.0));
        linalg::matvec(slice.d_minus_t.as_slice(), n, &xo, &mut c);
        let g: Vec<f64> = uniform_ball(&mut rng, n, 2.0 * t.sqrt()).iter().zip(&c).map(|(a, b)| a + b).collect();
        if region_of(&xo, &g) == Region::Global {
            outer = outer.max(slice.log_kernel_uo(&xo, &g).exp() / alpha);
        }
    }
    // Largest c whose constant stays within a factor e of the plain maximum.
    let log_c_at = |c: f64| local.iter().map(|p| p.0 + c * p.1).fold(f64::NEG_INFINITY, f64::max);
    let base = log_c_at(0.0);
    let mut exponent = f64::NAN;
    let mut c = 10.0;
    while c > 1e-4 {
        if log_c_at(c) <= base + 1.0 {
            exponent = c;
            break;
        }
        c /= 1.25;
    }
    let log_c = log_c_at(if exponent.is_finite() { exponent } else { 0.0 });
    if !global_c.is_finite() || !exponent.is_finite() {
        return Err(Error::DegenerateSample("no admissible local/global pairs".into()));
    }
    Ok(LocalGlobalReport {
        global_kernel_constant: global_c,
        local_r_oscillation: osc,
        local_heat_log_constant: log_c,
        local_heat_exponent: exponent,
        outer_annulus_constant: outer,
        alpha,
        sample_count,
        seed,
    })
}

/// `K_t(x, u)` with respect to `gamma_{-inf}`, exposed for the split checks.
pub fn kernel_value(model: &Model, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    Ok(kernels::log_kernel_uo(model, t, x, u)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn regions() {
        assert_eq!(region_of(&[0.0, 0.0], &[0.0, 0.0]), Region::Local);
        assert_eq!(region_of(&[0.0, 0.0], &[2.0, 0.0]), Region::Global);
        assert_eq!(region_of(&[0.0, 0.0], &[1.0, 0.0]), Region::Local);
        assert_eq!(region_of(&[1.0], &[1.5]), Region::Local);
    }

    #[test]
    fn grids() {
        let c = MaximalConfig::default();
        let m = c.minus_grid();
        assert_eq!(m[0], 1e-4);
        assert_eq!(*m.last().unwrap(), 1.0);
        assert!(m.windows(2).all(|w| w[1] / w[0] <= 1.1 + 1e-12));
        let p = c.plus_grid();
        assert!(p[0] > 1.0 && *p.last().unwrap() == 50.0);
        let a = alpha_grid(1e-4, 1e-1, 2);
        assert_eq!(a.len(), 7);
        assert_relative_eq!(a[6], 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn zero_evaluator_has_empty_level_set() {
        let m = Model::preset("isotropic2d").unwrap();
        let r = level_set_measure(&m, |_| 0.0, 1e-3, &[-2.0, -2.0], &[2.0, 2.0], 20).unwrap();
        assert_eq!(r.measure, 0.0);
    }

    #[test]
    fn small_ball_matches_closed_form() {
        let m = Model::preset("nonnormal2d").unwrap();
        for alpha in [1e-3f64, 1e-4] {
            let rho = 0.75 * (1.0 / alpha).ln();
            let (lo, hi) = annulus_box(&m, alpha, 2.0);
            let r = level_set_measure(&m, |x| (-m.r(x)).exp(), (-rho).exp(), &lo, &hi, 120).unwrap();
            let want = small_ball_measure(&m, rho).unwrap();
            assert!((r.measure / want - 1.0).abs() < 5e-3, "{} vs {}", r.measure, want);
        }
    }

    #[test]
    fn split_dominates_supremum() {
        let m = Model::preset("isotropic2d").unwrap();
        let f = TestFunction::normalized_indicator(&m, vec![0.0, 0.0], 0.3).unwrap();
        let op = MaximalOperator::new(&m, &f, &MaximalConfig::default()).unwrap();
        let v = op.evaluate(&[0.0, 0.0]);
        assert!(v.split.minus_local > 0.0);
        for x in [[0.0, 0.0], [0.5, 0.1], [2.0, -1.0]] {
            let v = op.evaluate(&x);
            assert!(v.full() <= v.split.total() * (1.0 + 1e-12));
            let prof = op.profile(&x);
            let sup = prof.iter().map(|p| p.1).fold(0.0, f64::max);
            assert_relative_eq!(sup, v.full(), max_relative = 1e-12);
        }
    }

    #[test]
    fn profile_of_wide_source_matches_semigroup() {
        let m = Model::preset("salogni1d").unwrap();
        let f = TestFunction::normalized_bump(&m, vec![0.5], 0.4).unwrap();
        let op = MaximalOperator::with_grids(&m, &f, &[0.5], &[2.0], 64).unwrap();
        let prof = op.profile(&[0.3]);
        let quad = crate::semigroup::QuadratureSpec::tensor(64);
        for (t, v) in prof {
            let want = crate::semigroup::apply_kolmogorov(&m, &f, t, &[0.3], &quad).unwrap().value;
            assert_relative_eq!(v, want, max_relative = 1e-8);
        }
    }

    #[test]
    fn sharpness_scalar_pipeline_runs() {
        let m = Model::preset("isotropic2d").unwrap();
        let r = sharpness_experiment(&m, &[1e-3], 3.0, 1).unwrap();
        let row = &r.rows[0];
        assert!(row.kernel_constant > 0.0 && row.b_star_measure > 0.0);
        assert!(r.required_offset > 3.0);
        assert_eq!(row.witness_measure, 0.0);
        let r = sharpness_experiment(&m, &[1e-6], SHARPNESS_OFFSET, 1).unwrap();
        assert_relative_eq!(r.rows[0].witness_measure, r.rows[0].b_star_measure, max_relative = 1e-12);
    }

    #[test]
    fn local_global_constants_are_finite() {
        let m = Model::preset("nonnormal2d").unwrap();
        let r = fit_local_global(&m, 1e-3, 500, 3).unwrap();
        assert!(r.global_kernel_constant.is_finite() && r.global_kernel_constant > 0.0);
        assert!(r.local_r_oscillation.is_finite());
        assert!(r.local_heat_exponent > 0.0);
    }
}
