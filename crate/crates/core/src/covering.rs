//! Finite-cloud simulation of the forbidden-zones recursion.

use crate::error::{Error, Result};
use crate::geometry::{tube_measure, Tube, TubeMethod};
use crate::growth::GrowthReport;
use crate::kernels;
use crate::linalg;
use crate::maximal::{geometric_grid, MaximalOperator};
use crate::model::Model;
use crate::par;
use crate::quadrature::ball_rule;
use crate::semigroup::TestFunction;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringParams {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub m: u32,
    /// Zone radius factor.
    pub a: f64,
    /// Smallest time scanned.
    pub delta: f64,
    pub ratio: f64,
    pub source_order: usize,
}

/// Lower bound on the times at which the annulus `m` of the global region is
/// reachable from points of norm at most `max_norm`: global pairs need
/// `|x - D_{-t} x| + 2^m sqrt(t) > 1 / (1 + |x|)`, and `|x - D_{-t} x| <= C t |x|`.
pub fn time_floor(growth: &GrowthReport, m: u32, max_norm: f64) -> f64 {
    let c = growth.near_identity_max.max(1e-12);
    let k = (0.25f64).min(1.0 / (2.0 * c));
    k * 4f64.powi(-(m as i32)) / (1.0 + max_norm).powi(2)
}

/// `count` points drawn uniformly from `{3/4 L <= R <= 5/4 L}`, `L = log(1/alpha)`.
pub fn annulus_cloud(model: &Model, alpha: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = model.dim;
    let l = (1.0 / alpha).ln();
    let hi: Vec<f64> = (0..n).map(|i| (2.5 * l * model.q_inf[(i, i)]).sqrt()).collect();
    let mut rng = par::stream_rng(seed, 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = hi.iter().map(|h| rng.random_range(-h..*h)).collect();
        let r = model.r(&x);
        if r >= 0.75 * l && r <= 1.25 * l {
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringState {
    pub params: CoveringParams,
    pub cloud: Vec<Vec<f64>>,
    /// Grid supremum of the annulus integral and its maximizing time, per cloud point.
    pub values: Vec<f64>,
    pub witness_times: Vec<f64>,
    /// Cloud indices of the selected points, in selection order.
    pub selected: Vec<usize>,
    pub times: Vec<f64>,
    pub zones: Vec<Tube>,
    pub balls: Vec<(Vec<f64>, f64)>,
}

impl CoveringState {
    pub fn candidates(&self) -> Vec<usize> {
        (0..self.cloud.len()).filter(|&i| self.values[i] >= self.params.alpha_prime).collect()
    }

    pub fn levels(&self) -> Vec<f64> {
        self.zones.iter().map(|z| z.beta).collect()
    }
}

/// Per-point supremum over `[delta, 1]` of `int K_t^{-,m}(x, .) h d gamma_{-inf}`.
pub fn annulus_values(model: &Model, h: &TestFunction, params: &CoveringParams, cloud: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if !(params.delta > 0.0 && params.delta <= 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1]".into()));
    }
    let grid = geometric_grid(params.delta, 1.0, params.ratio);
    let op = MaximalOperator::with_grids(model, h, &grid, &[], params.source_order)?;
    Ok(par::map_indexed(cloud.len(), |i| op.annulus_sup(&cloud[i], params.m)))
}

pub fn run_forbidden_zones(model: &Model, h: &TestFunction, params: &CoveringParams, cloud: &[Vec<f64>]) -> Result<CoveringState> {
    if !(params.a > 0.0) || !(params.alpha_prime > 0.0) {
        return Err(Error::InvalidArgument("A and alpha' must be positive".into()));
    }
    let vals = annulus_values(model, h, params, cloud)?;
    let mut state = CoveringState {
        params: params.clone(),
        cloud: cloud.to_vec(),
        values: vals.iter().map(|v| v.0).collect(),
        witness_times: vals.iter().map(|v| v.1).collect(),
        selected: vec![],
        times: vec![],
        zones: vec![],
        balls: vec![],
    };
    let mut order = state.candidates();
    order.sort_by(|&a, &b| model.r(&cloud[b]).total_cmp(&model.r(&cloud[a])).then(a.cmp(&b)));
    let mut covered = vec![false; order.len()];
    let scale = 2f64.powi(params.m as i32);
    for k in 0..order.len() {
        if covered[k] {
            continue;
        }
        let i = order[k];
        let x = &cloud[i];
        let t = state.witness_times[i];
        let tube = Tube::new(model, x.clone(), params.a * scale.powi(3) * t.sqrt())?;
        let centre = {
            let d = model.d(-t)?;
            let mut c = vec![0.0; x.len()];
            linalg::matvec(d.as_slice(), x.len(), x, &mut c);
            c
        };
        covered[k] = true;
        let rest: Vec<usize> = (k + 1..order.len()).filter(|&j| !covered[j]).collect();
        let hits = par::try_map_indexed(rest.len(), |q| tube.contains(model, &cloud[order[rest[q]]]))?;
        for (q, hit) in hits.into_iter().enumerate() {
            if hit {
                covered[rest[q]] = true;
            }
        }
        state.selected.push(i);
        state.times.push(t);
        state.zones.push(tube);
        state.balls.push((centre, scale * t.sqrt()));
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringVerification {
    pub overlapping_pairs: Vec<(usize, usize)>,
    pub uncovered: Vec<usize>,
    /// `gamma_{-inf}(Z) alpha' / int_B h d gamma_{-inf}` per selected point.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub ball_mass_sum: f64,
    pub zone_measure_sum: f64,
}

impl CoveringVerification {
    pub fn disjoint(&self) -> bool {
        self.overlapping_pairs.is_empty()
    }

    pub fn covered(&self) -> bool {
        self.uncovered.is_empty()
    }
}

/// Checks the three covering properties and reports every violation.
pub fn inspect_covering(model: &Model, state: &CoveringState, h: &TestFunction) -> Result<CoveringVerification> {
    let nb = state.balls.len();
    let mut overlapping_pairs = Vec::new();
    for i in 0..nb {
        for j in i + 1..nb {
            let (ci, ri) = &state.balls[i];
            let (cj, rj) = &state.balls[j];
            if linalg::dist(ci, cj) < ri + rj {
                overlapping_pairs.push((i, j));
            }
        }
    }
    let cands = state.candidates();
    let inside = par::try_map_indexed(cands.len(), |q| -> Result<bool> {
        for z in &state.zones {
            if z.contains(model, &state.cloud[cands[q]])? {
                return Ok(true);
            }
        }
        Ok(false)
    })?;
    let uncovered: Vec<usize> = cands.iter().zip(&inside).filter(|(_, ok)| !**ok).map(|(i, _)| *i).collect();
    let mut ratios = Vec::with_capacity(nb);
    let mut ball_mass_sum = 0.0;
    let mut zone_measure_sum = 0.0;
    for (zone, (c, r)) in state.zones.iter().zip(&state.balls) {
        let rule = ball_rule(c, *r, 32)?;
        let mass: f64 = (0..rule.len())
            .map(|k| {
                let p = rule.point(k);
                rule.weights[k] * h.eval(p) * kernels::log_gamma_minus_inf(model, p).value()
            })
            .sum();
        let zm = tube_measure(model, zone, TubeMethod::PolarQuadrature)?.value;
        ball_mass_sum += mass;
        zone_measure_sum += zm;
        ratios.push(if mass > 0.0 { zm * state.params.alpha_prime / mass } else { f64::INFINITY });
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(CoveringVerification { overlapping_pairs, uncovered, ratios, max_ratio, ball_mass_sum, zone_measure_sum })
}

pub fn verify_covering(model: &Model, state: &CoveringState, h: &TestFunction) -> Result<CoveringVerification> {
    let v = inspect_covering(model, state, h)?;
    if !v.disjoint() {
        return Err(Error::DisjointnessViolated { pairs: v.overlapping_pairs });
    }
    if !v.covered() {
        return Err(Error::CoverageViolated { points: v.uncovered });
    }
    Ok(v)
}

/// Doubles `A` from `params.a` until disjointness and coverage both hold.
pub fn discover_a(
    model: &Model,
    h: &TestFunction,
    params: &CoveringParams,
    cloud: &[Vec<f64>],
    max_doublings: usize,
) -> Result<(CoveringState, CoveringVerification)> {
    let mut p = params.clone();
    let mut last = None;
    for _ in 0..=max_doublings {
        let state = run_forbidden_zones(model, h, &p, cloud)?;
        match verify_covering(model, &state, h) {
            Ok(v) => return Ok((state, v)),
            Err(e) => last = Some(e),
        }
        p.a *= 2.0;
    }
    Err(last.unwrap_or_else(|| Error::InvalidArgument("no doublings allowed".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_to_ellipsoid;
    use crate::growth::fit_growth_constants;

    fn setup(model: &Model) -> (TestFunction, CoveringParams, Vec<Vec<f64>>) {
        let alpha = (-8.0f64).exp();
        let p = project_to_ellipsoid(model, &[1.0, 0.5], 8.0);
        let h = TestFunction::normalized_bump(model, p, 0.25).unwrap();
        let cloud = annulus_cloud(model, alpha, 300, 5);
        let growth = fit_growth_constants(model, 100, 1).unwrap();
        let max_norm = cloud.iter().map(|x| linalg::norm(x)).fold(0.0, f64::max);
        let params = CoveringParams {
            alpha,
            alpha_prime: 1.0,
            m: 0,
            a: 10.0,
            delta: time_floor(&growth, 0, max_norm),
            ratio: 1.1,
            source_order: 16,
        };
        (h, params, cloud)
    }

    fn with_level(model: &Model, h: &TestFunction, mut params: CoveringParams, cloud: &[Vec<f64>]) -> CoveringParams {
        let vals = annulus_values(model, h, &params, cloud).unwrap();
        params.alpha_prime = 0.25 * vals.iter().map(|v| v.0).fold(0.0, f64::max);
        params
    }

    #[test]
    fn cloud_lies_in_annulus() {
        let m = Model::preset("nonnormal2d").unwrap();
        let l: f64 = 6.0;
        for x in annulus_cloud(&m, (-l).exp(), 50, 2) {
            let r = m.r(&x);
            assert!(r >= 0.75 * l && r <= 1.25 * l);
        }
    }

    #[test]
    fn far_source_gives_empty_state() {
        let m = Model::preset("isotropic2d").unwrap();
        let (_, params, cloud) = setup(&m);
        let h = TestFunction::normalized_bump(&m, vec![0.0, 0.0], 0.1).unwrap();
        let params = CoveringParams { alpha_prime: 1e3, ..params };
        let s = run_forbidden_zones(&m, &h, &params, &cloud).unwrap();
        assert!(s.selected.is_empty());
    }

    #[test]
    fn recursion_terminates_with_monotone_levels() {
        let m = Model::preset("isotropic2d").unwrap();
        let (h, params, cloud) = setup(&m);
        let params = with_level(&m, &h, params, &cloud);
        let s = run_forbidden_zones(&m, &h, &params, &cloud).unwrap();
        assert!(!s.selected.is_empty());
        assert!(s.levels().windows(2).all(|w| w[1] <= w[0]));
        assert!(s.times.iter().all(|t| *t >= params.delta && *t <= 1.0));
        let v = verify_covering(&m, &s, &h).unwrap();
        assert!(v.max_ratio.is_finite());
        assert!(v.ball_mass_sum <= 1.0 + 1e-9);
    }

    #[test]
    fn tiny_zones_violate_disjointness() {
        let m = Model::preset("isotropic2d").unwrap();
        let (h, params, cloud) = setup(&m);
        let params = CoveringParams { a: 0.01, ..with_level(&m, &h, params, &cloud) };
        let s = run_forbidden_zones(&m, &h, &params, &cloud).unwrap();
        assert!(matches!(verify_covering(&m, &s, &h), Err(Error::DisjointnessViolated { .. })));
    }

    #[test]
    fn single_point_cloud() {
        let m = Model::preset("isotropic2d").unwrap();
        let (h, params, cloud) = setup(&m);
        let params = with_level(&m, &h, params, &cloud);
        let s0 = run_forbidden_zones(&m, &h, &params, &cloud).unwrap();
        let one = vec![cloud[s0.selected[0]].clone()];
        let s = run_forbidden_zones(&m, &h, &params, &one).unwrap();
        assert_eq!((s.zones.len(), s.balls.len()), (1, 1));
        verify_covering(&m, &s, &h).unwrap();
    }
}
