//! Experiment drivers behind the `--experiment` flag.

use crate::config::{Experiment, RunConfig};
use crate::report::CsvReport;
use oukl_core::covering::{self, CoveringParams};
use oukl_core::geometry::{self, PolarPatch, Tube, TubeMethod};
use oukl_core::growth::fit_growth_constants;
use oukl_core::kernels::{self, BoundSampler, MassMethod, TimeSlice};
use oukl_core::maximal::{self, ExperimentConfig};
use oukl_core::semigroup::{self, QuadratureSpec, TestFunction};
use oukl_core::{linalg, par, Error, Model, Result};
use std::f64::consts::PI;

/// A finished experiment: its report and the names of failed assertions.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: CsvReport,
    pub failures: Vec<String>,
}

pub fn run_experiment(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let mut outcome = match config.experiment {
        Experiment::Verify => verify(&model, config)?,
        Experiment::KernelEval => kernel_eval(&model, config)?,
        Experiment::SemigroupCheck => semigroup_check(&model, config)?,
        Experiment::TubeMeasure => tube_experiment(&model, config)?,
        Experiment::WeakType => weak_type(&model, config)?,
        Experiment::Enhanced => enhanced(&model, config)?,
        Experiment::Sharpness => sharpness(&model, config)?,
        Experiment::CoveringSim => covering_sim(&model, config)?,
    };
    let mut meta = config.echo();
    meta.append(&mut outcome.report.meta);
    outcome.report.meta = meta;
    Ok(outcome)
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Named `value <= tolerance` checks, reported as rows.
#[derive(Default)]
struct Checks {
    rows: Vec<(String, f64, f64)>,
}

impl Checks {
    fn le(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.rows.push((name.into(), value, tolerance));
    }

    fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|(_, v, t)| !(v <= t))
            .map(|(n, v, t)| format!("{n}: {v:e} exceeds {t:e}"))
            .collect()
    }

    fn into_outcome(self) -> Result<Outcome> {
        let failures = self.failures();
        let mut report = CsvReport::new(&["check_id", "value", "tolerance", "passed"]);
        for (i, (name, v, t)) in self.rows.iter().enumerate() {
            // Non-finite values become a saturated failure row.
            let v = if v.is_finite() { *v } else { f64::MAX };
            report.push(vec![i as f64, v, *t, if v <= *t { 1.0 } else { 0.0 }]);
            report.meta(format!("check.{i}"), name.clone());
        }
        Ok(Outcome { report, failures })
    }
}

fn rel_diff(a: &linalg::Mat, b: &linalg::Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Largest relative deviation of the kernel identity linking the two kernels.
pub fn kernel_identity_residual(model: &Model, slice: &TimeSlice, x: &[f64], u: &[f64]) -> f64 {
    let n = model.dim as f64;
    let lhs = slice.log_kernel_uo(x, u);
    let rhs = -n * (2.0 * PI).ln() - model.log_det_q_inf - model.r(x) - model.r(u)
        + slice.t * model.trace_b
        + slice.log_kernel_ou(u, x);
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

/// Points of norm at most 3 on which conservativity is checked.
fn mass_grid(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    for i in 0..n {
        for r in [1.5, -3.0] {
            out.push(unit(n, i).iter().map(|v| v * r).collect());
        }
    }
    let diag = 3.0 / (n as f64).sqrt();
    out.push(vec![diag; n]);
    out
}

fn verify(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let n = model.dim;
    let seed = config.seed;
    let mut c = Checks::default();

    c.le("lyapunov_residual", model.lyapunov_residual(), 1e-10);
    c.le("q_inf_inverse", (&model.q_inf_inv * &model.q_inf - linalg::Mat::identity(n, n)).norm(), 1e-10);
    for t in [0.01, 0.1, 1.0, 10.0] {
        let dev = rel_diff(&model.cov_t(t)?, &model.cov_t_oracle(t, 1e-11)?);
        c.le(format!("covariance_vs_quadrature t={t}"), dev, 1e-8);
    }
    let mut group = 0.0f64;
    for (t, s) in [(0.3, 0.7), (-1.0, 2.5), (2.0, -0.5), (0.0, 1.0)] {
        group = group.max(rel_diff(&(model.d(t)? * model.d(s)?), &model.d(t + s)?));
    }
    c.le("flow_group_law", group, 1e-10);

    let identity = kernel_identity_max(model, 1000, seed)?;
    c.le("kernel_identity", identity, 1e-10);

    let times = [0.1, 1.0, 5.0];
    let grid = mass_grid(n);
    let (method, tol) = match MassMethod::default_for(n, seed) {
        m @ MassMethod::Hermite { .. } => (m, 1e-6),
        m => (m, 1e-3),
    };
    let mut mass_dev = 0.0f64;
    for &t in &times {
        let slice = TimeSlice::new(model, t)?;
        for x in &grid {
            let e = kernels::kernel_mass_with(&slice, x, method, None)?;
            mass_dev = mass_dev.max((e.value - 1.0).abs());
        }
    }
    c.le("conservativity", mass_dev, tol);

    let quad = QuadratureSpec::tensor(if n <= 2 { 48 } else { 16 });
    let bump = TestFunction::GaussianBump { center: unit(n, 0).iter().map(|v| 0.3 * v).collect(), sigma: 0.5, weight: 1.0 };
    let v: Vec<f64> = (0..n).map(|i| 1.0 - 0.5 * i as f64).collect();
    let (mut paths, mut linear) = (0.0f64, 0.0f64);
    for t in [0.2, 1.0] {
        for x in [vec![0.0; n], unit(n, 0).iter().map(|v| 0.5 * v).collect(), vec![-0.7; n]] {
            let a = semigroup::apply_kolmogorov(model, &bump, t, &x, &quad)?;
            let b = semigroup::apply_kernel(model, &bump, t, &x, &quad)?;
            paths = paths.max((a.value - b.value).abs());
            let lin = semigroup::apply_kolmogorov(model, &TestFunction::Linear(v.clone()), t, &x, &quad)?;
            let mean = model.exp_b(-t)? * linalg::Vector::from_column_slice(&x);
            let exact: f64 = v.iter().zip(mean.iter()).map(|(a, b)| a * b).sum();
            linear = linear.max((lin.value - exact).abs() / exact.abs().max(1.0));
        }
    }
    c.le("kolmogorov_vs_kernel", paths, 1e-4);
    c.le("linear_closed_form", linear, 1e-8);

    let (f, g) = symmetry_pair(n);
    let sym = semigroup::check_symmetry(model, &f, &g, 0.5, &QuadratureSpec::tensor(if n <= 2 { 24 } else { 12 }))?;
    if model.is_symmetric_case() {
        c.le("symmetry_defect_over_error", sym.defect() / sym.error, 1.0);
    } else {
        c.le("asymmetry_margin", 10.0 * sym.error / sym.defect(), 1.0);
    }

    let sampler = BoundSampler::default();
    let (small, large) = kernels::fit_kernel_bounds(model, &kernels::small_t_grid(), &kernels::large_t_grid(), &sampler, seed)?;
    c.le("bound_violation_small_t", small.max_violation, 1e-6);
    c.le("bound_violation_large_t", large.max_violation, 1e-6);
    let spread = (small.max_ratio / small.min_ratio).max(large.max_ratio / large.min_ratio);
    c.le("bound_ratio_spread_finite", spread, f64::MAX);
    if n == 1 {
        let mut outside = 0.0f64;
        for &t in &kernels::small_t_grid() {
            let k = exact_small_t_coefficient(model, t)?;
            outside = outside.max(small.c_lower - k).max(k - small.c_upper);
        }
        c.le("small_t_coefficient_bracketed", outside, 1e-9);
    }

    let roundtrip = polar_roundtrip_max(model, 200, seed)?;
    c.le("polar_roundtrip", roundtrip, 1e-10);

    let growth = fit_growth_constants(model, 200, seed)?;
    c.le("growth_envelope_finite", growth.upper_ratio_max / growth.lower_ratio_min, f64::MAX);

    if n == 2 {
        let patch = PolarPatch { beta: 4.0, theta: (0.3, 1.1), s: (-0.5, 0.4) };
        let exact = geometry::patch_volume(model, &patch)?;
        let mc = geometry::patch_volume_mc(model, &patch, 400_000, seed)?;
        c.le("patch_volume_vs_mc", (exact - mc.value).abs() / exact, 0.01);
        let rho = rho_integral_ratios(model)?;
        let worst = rho.iter().map(|r| r.1).fold(0.0, f64::max);
        c.le("rho_integral_envelope", worst, 10.0);
        let dist = geometry::check_distance_bounds(model, 4.0, 500, seed)?;
        c.le("separation_constant_inverse", 1.0 / dist.separation_min, 1e3);
    }
    c.into_outcome()
}

/// The `K^{UO}` Gaussian decay coefficient for `n = 1`, in units of `1/t`.
pub fn exact_small_t_coefficient(model: &Model, t: f64) -> Result<f64> {
    let s = TimeSlice::new(model, t)?;
    Ok(0.5 * s.pulled_form[(0, 0)] * t)
}

/// Two bumps whose pairing separates the symmetric and non-symmetric cases.
pub fn symmetry_pair(n: usize) -> (TestFunction, TestFunction) {
    let a: Vec<f64> = (0..n).map(|i| if i == 0 { 0.6 } else { 0.0 }).collect();
    let b: Vec<f64> = (0..n).map(|i| if i + 1 == n && n > 1 { 0.6 } else if n == 1 { -0.4 } else { 0.0 }).collect();
    (
        TestFunction::GaussianBump { center: a, sigma: 0.4, weight: 1.0 },
        TestFunction::GaussianBump { center: b, sigma: 0.4, weight: 1.0 },
    )
}

pub fn kernel_identity_max(model: &Model, count: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let n = model.dim;
    let mut rng = par::stream_rng(seed, 11);
    let samples: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..count)
        .map(|_| {
            let t = 10f64.powf(rng.random_range(-3.0..20f64.log10()));
            (t, kernels::uniform_ball(&mut rng, n, 3.0), kernels::uniform_ball(&mut rng, n, 3.0))
        })
        .collect();
    let devs = par::try_map_indexed(count, |i| -> Result<f64> {
        let (t, x, u) = &samples[i];
        Ok(kernel_identity_residual(model, &TimeSlice::new(model, *t)?, x, u))
    })?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

pub fn polar_roundtrip_max(model: &Model, count: usize, seed: u64) -> Result<f64> {
    let n = model.dim;
    let mut rng = par::stream_rng(seed, 12);
    let xs: Vec<Vec<f64>> = (0..count).map(|_| kernels::uniform_ball(&mut rng, n, 3.0)).collect();
    let mut worst = 0.0f64;
    for beta in [1.0, 4.0] {
        for x in &xs {
            if linalg::norm(x) < 1e-6 {
                continue;
            }
            let p = geometry::to_polar(model, x, beta)?;
            let y = geometry::from_polar(model, &p)?;
            worst = worst.max(linalg::dist(x, &y) / linalg::norm(x));
        }
    }
    Ok(worst)
}

/// `(rho_max, ratio)` of the radial integral inequality at a fixed point of `E_4`.
pub fn rho_integral_ratios(model: &Model) -> Result<Vec<(f64, f64)>> {
    let p = geometry::ellipse_point(model, 4.0, 0.7);
    [2.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|&rho| geometry::check_rho_integral(model, &p, rho).map(|r| (rho, r.ratio())))
        .collect()
}

fn kernel_eval(model: &Model, config: &RunConfig) -> Result<Outcome> {
    use rand::Rng;
    let n = model.dim;
    let t_max = config.t_max.unwrap_or(20.0);
    let times = maximal::geometric_grid(1e-3, t_max, 10f64.powf(0.25));
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("u{i}")));
    header.extend(["log_k_ou", "log_k_uo", "log_m_uo_lebesgue", "identity_residual"].map(String::from));
    let mut report = CsvReport::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let per_t = 8;
    let rows = par::try_map_indexed(times.len(), |i| -> Result<Vec<Vec<f64>>> {
        let t = times[i];
        let slice = TimeSlice::new(model, t)?;
        let mut rng = par::stream_rng(config.seed, i as u64);
        let mut out = Vec::new();
        for _ in 0..per_t {
            let x = kernels::uniform_ball(&mut rng, n, 3.0);
            let mut centre = vec![0.0; n];
            slice.uo_mean(&x, &mut centre);
            let spread = rng.random_range(0.0..2.0) * t.sqrt().min(1.0);
            let u: Vec<f64> = centre.iter().zip(kernels::uniform_ball(&mut rng, n, spread)).map(|(a, b)| a + b).collect();
            let mut row = vec![t];
            row.extend_from_slice(&x);
            row.extend_from_slice(&u);
            row.push(slice.log_kernel_ou(&x, &u));
            row.push(slice.log_kernel_uo(&x, &u));
            row.push(slice.log_kernel_uo_lebesgue(&x, &u));
            row.push(kernel_identity_residual(model, &slice, &x, &u));
            out.push(row);
        }
        Ok(out)
    })?;
    let mut worst = 0.0f64;
    for row in rows.into_iter().flatten() {
        worst = worst.max(row[row.len() - 1]);
        report.push(row);
    }
    report.meta("identity_residual_max", fmt(worst));
    let failures = if worst <= 1e-10 { vec![] } else { vec![format!("kernel_identity: {worst:e} exceeds 1e-10")] };
    Ok(Outcome { report, failures })
}

fn semigroup_check(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let n = model.dim;
    let f = TestFunction::GaussianBump { center: vec![0.2; n], sigma: 0.5, weight: 1.0 };
    let xs = vec![vec![0.0; n], unit(n, 0).iter().map(|v| v - 0.4).collect(), vec![0.8; n]];
    let nodes = if n <= 2 { 32 } else { 12 };
    let quad = QuadratureSpec::tensor(nodes);
    let t_max = config.t_max.unwrap_or(1.0);
    let pairs = [(0.25 * t_max, 0.25 * t_max), (0.1 * t_max, 0.5 * t_max)];
    let mut report = CsvReport::new(&["t", "s", "composition_deviation", "table_nodes", "path_deviation"]);
    let mut failures = Vec::new();
    for (t, s) in pairs {
        let law = semigroup::check_semigroup_law(model, &f, t, s, &xs, &quad)?;
        let mut path = 0.0f64;
        for x in &xs {
            let a = semigroup::apply_kolmogorov(model, &f, t + s, x, &quad)?;
            let b = semigroup::apply_kernel(model, &f, t + s, x, &quad)?;
            path = path.max((a.value - b.value).abs());
        }
        for (name, v) in [("composition", law.deviation), ("kolmogorov_vs_kernel", path)] {
            if !(v <= 1e-4) {
                failures.push(format!("{name} at t={t}, s={s}: {v:e} exceeds 1e-4"));
            }
        }
        report.push(vec![t, s, law.deviation, law.resolution as f64, path]);
    }
    Ok(Outcome { report, failures })
}

/// Tube measures over the `(beta, radius)` grid and the quadrature-vs-sampling check.
fn tube_experiment(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let n = model.dim;
    if n > 2 {
        return Err(Error::InvalidArgument("tube measures are implemented for n <= 2".into()));
    }
    let mut report = CsvReport::new(&["beta", "a", "measure", "ratio"]);
    let betas = [9.0, 16.0, 25.0];
    let radii = [0.25, 0.5, 1.0];
    let center = |beta: f64| -> Vec<f64> {
        if n == 2 {
            geometry::ellipse_point(model, beta, 0.7).to_vec()
        } else {
            geometry::project_to_ellipsoid(model, &[1.0], beta)
        }
    };
    let mut ratios = Vec::new();
    for &beta in &betas {
        for &a in &radii {
            let tube = Tube::new(model, center(beta), a)?;
            let m = geometry::tube_measure(model, &tube, TubeMethod::PolarQuadrature)?;
            let ratio = m.value / (a.powi(n as i32 - 1) * beta.exp() / beta.sqrt());
            ratios.push(ratio);
            report.push(vec![beta, a, m.value, ratio]);
        }
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    report.meta("ratio_min", fmt(lo));
    report.meta("ratio_max", fmt(hi));
    let mut failures = Vec::new();
    if !(lo > 0.0 && hi.is_finite()) {
        failures.push(format!("tube_ratio_envelope: [{lo:e}, {hi:e}] is not a finite positive range"));
    }
    let tube = Tube::new(model, center(9.0), 0.5)?;
    let quad = geometry::tube_measure(model, &tube, TubeMethod::PolarQuadrature)?;
    let mc = geometry::tube_measure(model, &tube, TubeMethod::MonteCarlo { samples: 200_000, seed: config.seed })?;
    let dev = (quad.value - mc.value).abs() / quad.value;
    report.meta("mc_measure", fmt(mc.value));
    report.meta("mc_error", fmt(mc.error));
    report.meta("quadrature_vs_mc", fmt(dev));
    if !(dev <= 0.03) {
        failures.push(format!("tube_quadrature_vs_mc: {dev:e} exceeds 3e-2"));
    }
    Ok(Outcome { report, failures })
}

fn experiment_config(config: &RunConfig) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    if let Some(t) = config.t_max {
        c.maximal.t_max = t;
    }
    if let Some(r) = config.resolution {
        c.level.cells = r;
    }
    c
}

/// Centres of the point-mass approximations.
pub fn weak_type_centers(n: usize) -> Vec<Vec<f64>> {
    let base = [[0.0, 0.0, 0.0], [0.8, 0.3, -0.2], [-0.5, -1.0, 0.4]];
    base.iter()
        .map(|c| {
            let mut c = c[..n.min(3)].to_vec();
            c.resize(n, 0.0);
            c
        })
        .collect()
}

fn weak_type(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let alphas = maximal::alpha_grid(config.alpha_min.unwrap_or(1e-4), config.alpha_max.unwrap_or(1e-1), 2);
    let centers = weak_type_centers(model.dim);
    let r = maximal::weak_type_experiment(model, &centers, &alphas, &experiment_config(config))?;
    let mut report = CsvReport::new(&["center", "alpha", "measure", "statistic", "resolution_change"]);
    for row in &r.rows {
        report.push(vec![row.center as f64, row.alpha, row.measure, row.statistic, row.resolution_change]);
    }
    for (i, c) in centers.iter().enumerate() {
        report.meta(format!("center.{i}"), c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
    }
    report.meta("envelope", fmt(r.envelope));
    report.meta("stability", fmt(r.stability));
    report.meta("nonlocal_constant", fmt(r.nonlocal_constant));
    report.meta("above_constant_measure", fmt(r.above_constant_measure));
    report.meta("time_grid_change", fmt(r.grid_change));
    let mut failures = Vec::new();
    if !r.envelope.is_finite() {
        failures.push("weak_type_envelope: not finite".to_string());
    }
    if !(r.stability <= 10.0) {
        failures.push(format!("weak_type_stability: {:e} exceeds 10", r.stability));
    }
    if r.touches_boundary {
        failures.push("weak_type_box: level set touches the tabulation box".to_string());
    }
    Ok(Outcome { report, failures })
}

/// Point mass approximated by a normalized indicator off the origin.
pub fn enhanced_source(model: &Model, radius: f64) -> Result<TestFunction> {
    let n = model.dim;
    TestFunction::normalized_indicator(model, (0..n).map(|i| if i == 0 { 0.5 } else { 0.25 }).collect(), radius)
}

fn enhanced(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let alphas = maximal::alpha_grid(config.alpha_min.unwrap_or(1e-4), config.alpha_max.unwrap_or(1e-2), 2);
    let ec = experiment_config(config);
    let f = enhanced_source(model, ec.point_mass_radius)?;
    let r = maximal::enhanced_experiment(model, &f, &alphas, &ec)?;
    let mut report = CsvReport::new(&["alpha", "measure", "alpha_scaled", "alpha_log_scaled"]);
    let mut failures = Vec::new();
    for row in &r.rows {
        report.push(vec![row.alpha, row.measure, row.alpha_scaled, row.alpha_log_scaled]);
        if row.measure > row.full_measure * (1.0 + 1e-9) + 1e-300 {
            failures.push(format!("enhanced_consistency at alpha={:e}: {:e} > {:e}", row.alpha, row.measure, row.full_measure));
        }
    }
    report.meta("log_envelope", fmt(r.log_envelope));
    report.meta("plain_growth", fmt(r.plain_growth));
    report.meta("time_grid_change", fmt(r.grid_change));
    if !r.log_envelope.is_finite() {
        failures.push("enhanced_envelope: not finite".to_string());
    }
    if r.touches_boundary {
        failures.push("enhanced_box: level set touches the tabulation box".to_string());
    }
    Ok(Outcome { report, failures })
}

fn sharpness(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let alphas = maximal::alpha_grid(config.alpha_min.unwrap_or(1e-8), config.alpha_max.unwrap_or(1e-6), 1);
    let offset = config.a.unwrap_or(maximal::SHARPNESS_OFFSET);
    let r = maximal::sharpness_experiment(model, &alphas, offset, config.seed)?;
    let mut report =
        CsvReport::new(&["alpha", "r_z", "b_star_measure", "b_star_ratio", "witness_measure", "witness_statistic"]);
    for row in &r.rows {
        report.push(vec![row.alpha, row.r_z, row.b_star_measure, row.b_star_ratio, row.witness_measure, row.witness_statistic]);
    }
    report.meta("kernel_constant", fmt(r.kernel_constant));
    report.meta("required_offset", fmt(r.required_offset));
    report.meta("ratio_spread", fmt(r.ratio_spread));
    report.meta("witness_lower", fmt(r.witness_lower));
    report.meta("distance_constant", fmt(r.distance_constant));
    let mut failures = Vec::new();
    if !(r.ratio_spread <= 2.0) {
        failures.push(format!("b_star_ratio_spread: {:e} exceeds 2", r.ratio_spread));
    }
    if !(r.witness_lower > 0.0) {
        failures.push(format!(
            "sharpness_witness: no positive lower bound at A = {offset} (needs A > {:.2})",
            r.required_offset
        ));
    }
    Ok(Outcome { report, failures })
}

/// Inputs of the covering simulation: source, parameters with `A` unset, and the cloud.
pub fn covering_setup(model: &Model, config: &RunConfig) -> Result<(TestFunction, CoveringParams, Vec<Vec<f64>>)> {
    let n = model.dim;
    let alpha = config.alpha_min.unwrap_or((-8.0f64).exp());
    let level = (1.0 / alpha).ln();
    let dir: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.5 }).collect();
    let h = TestFunction::normalized_bump(model, geometry::project_to_ellipsoid(model, &dir, level), 0.25)?;
    let cloud = covering::annulus_cloud(model, alpha, 1000, config.seed);
    let growth = fit_growth_constants(model, 100, config.seed)?;
    let max_norm = cloud.iter().map(|x| linalg::norm(x)).fold(0.0, f64::max);
    let mut params = CoveringParams {
        alpha,
        alpha_prime: 1.0,
        m: config.m,
        a: 0.01,
        delta: covering::time_floor(&growth, config.m, max_norm),
        ratio: 1.1,
        source_order: 16,
    };
    let values = covering::annulus_values(model, &h, &params, &cloud)?;
    params.alpha_prime = 0.25 * values.iter().map(|v| v.0).fold(0.0, f64::max);
    Ok((h, params, cloud))
}

fn covering_sim(model: &Model, config: &RunConfig) -> Result<Outcome> {
    let (h, mut params, cloud) = covering_setup(model, config)?;
    let mut failures = Vec::new();
    let (state, verification) = match config.a {
        Some(a) => {
            params.a = a;
            let state = covering::run_forbidden_zones(model, &h, &params, &cloud)?;
            if let Err(e) = covering::verify_covering(model, &state, &h) {
                failures.push(format!("{}: {e}", e.kind()));
            }
            let v = covering::inspect_covering(model, &state, &h)?;
            (state, v)
        }
        None => covering::discover_a(model, &h, &params, &cloud, 16)?,
    };
    let mut header = vec!["zone".to_string()];
    header.extend((0..model.dim).map(|i| format!("x{i}")));
    header.extend(["time", "level", "zone_radius", "ball_radius", "ratio"].map(String::from));
    let mut report = CsvReport::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (k, &i) in state.selected.iter().enumerate() {
        let mut row = vec![k as f64];
        row.extend_from_slice(&state.cloud[i]);
        row.extend([
            state.times[k],
            state.values[i],
            state.zones[k].radius,
            state.balls[k].1,
            verification.ratios.get(k).copied().unwrap_or(0.0),
        ]);
        report.push(row);
    }
    report.meta("A_used", state.params.a.to_string());
    report.meta("alpha", fmt(params.alpha));
    report.meta("alpha_prime", fmt(params.alpha_prime));
    report.meta("delta", fmt(params.delta));
    report.meta("candidates", state.candidates().len().to_string());
    report.meta("overlapping_pairs", verification.overlapping_pairs.len().to_string());
    report.meta("uncovered", verification.uncovered.len().to_string());
    report.meta("max_ratio", fmt(verification.max_ratio));
    report.meta("ball_mass_sum", fmt(verification.ball_mass_sum));
    report.meta("zone_measure_sum", fmt(verification.zone_measure_sum));
    if !verification.max_ratio.is_finite() {
        failures.push("covering_ratio_envelope: not finite".to_string());
    }
    Ok(Outcome { report, failures })
}
