use oukl_core::geometry::{annulus_index, from_polar, to_polar};
use oukl_core::kernels::{log_gamma_inf, log_gamma_minus_inf, TimeSlice};
use oukl_core::linalg::{self, Mat};
use oukl_core::maximal::{level_set_measure, local_radius};
use oukl_core::semigroup::{apply_kernel, QuadratureSpec, TestFunction};
use oukl_core::{build_model, Model};
use proptest::prelude::*;
use std::f64::consts::PI;

fn planar() -> impl Strategy<Value = Model> {
    prop_oneof![Just("isotropic2d"), Just("nonnormal2d")].prop_map(|n| Model::preset(n).unwrap())
}

fn any_preset() -> impl Strategy<Value = Model> {
    prop_oneof![Just("salogni1d"), Just("isotropic2d"), Just("nonnormal2d"), Just("isotropic3d")]
        .prop_map(|n| Model::preset(n).unwrap())
}

/// Random stable model: `Q = L L^T + 0.2 I`, `B = M - shift I` with `B` Hurwitz.
fn random_model() -> impl Strategy<Value = Model> {
    (1usize..=3)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(-1.0f64..1.0, n * n),
                prop::collection::vec(-1.5f64..1.5, n * n),
                0.2f64..1.5,
            )
        })
        .prop_filter_map("rejected model", |(n, l, m, margin)| {
            let l = Mat::from_row_slice(n, n, &l);
            let q = linalg::symmetrize(&(&l * l.transpose() + Mat::identity(n, n) * 0.2));
            let m = Mat::from_row_slice(n, n, &m);
            let shift = linalg::spectral_abscissa(&m) + margin;
            build_model(q, m - Mat::identity(n, n) * shift).ok()
        })
}

fn point(n: usize, radius: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-radius..radius, n)
}

fn with_point(radius: f64) -> impl Strategy<Value = (Model, Vec<f64>)> {
    any_preset().prop_flat_map(move |m| {
        let n = m.dim;
        (Just(m), point(n, radius))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_roundtrip(m in planar(), x in point(2, 5.0), beta in 0.5f64..9.0) {
        prop_assume!(linalg::norm(&x) > 0.05);
        let p = to_polar(&m, &x, beta).unwrap();
        prop_assert!((m.r(&p.xt) - beta).abs() <= 1e-10 * beta);
        let y = from_polar(&m, &p).unwrap();
        prop_assert!(linalg::dist(&x, &y) <= 1e-10 * linalg::norm(&x));
    }

    #[test]
    fn flow_group_law(m in random_model(), t in -3.0f64..3.0, s in -3.0f64..3.0) {
        let lhs = m.d(t).unwrap() * m.d(s).unwrap();
        let rhs = m.d(t + s).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * rhs.norm());
        let id = m.d(0.0).unwrap();
        prop_assert!((id - Mat::identity(m.dim, m.dim)).norm() <= 1e-14);
    }

    #[test]
    fn r_increases_along_flow(m in random_model(), dir in point(3, 1.0), s0 in -2.0f64..2.0) {
        let x: Vec<f64> = dir[..m.dim].to_vec();
        prop_assume!(linalg::norm(&x) > 1e-3);
        let values: Vec<f64> = (0..10)
            .map(|k| {
                let y = m.d(s0 + 0.1 * k as f64).unwrap() * linalg::Vector::from_column_slice(&x);
                m.r(y.as_slice())
            })
            .collect();
        prop_assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
    }

    #[test]
    fn covariance_is_monotone(m in random_model(), s in 0.001f64..5.0, gap in 0.001f64..5.0) {
        let diff = m.cov_t(s + gap).unwrap() - m.cov_t(s).unwrap();
        let (lo, _) = linalg::sym_eigen_range(&diff);
        prop_assert!(lo >= -1e-10, "{lo}");
    }

    #[test]
    fn reciprocal_densities((m, x) in with_point(6.0)) {
        let s = log_gamma_inf(&m, &x).ln() + log_gamma_minus_inf(&m, &x).ln();
        prop_assert!(s.abs() <= 1e-12);
    }

    #[test]
    fn kernel_identity((m, x) in with_point(3.0), u in point(3, 3.0), lt in -3.0f64..1.3) {
        let n = m.dim;
        let u = &u[..n];
        let slice = TimeSlice::new(&m, 10f64.powf(lt)).unwrap();
        let lhs = slice.log_kernel_uo(&x, u);
        let rhs = -(n as f64) * (2.0 * PI).ln() - m.log_det_q_inf - m.r(&x) - m.r(u)
            + slice.t * m.trace_b
            + slice.log_kernel_ou(u, &x);
        prop_assert!(lhs.is_finite() && slice.log_kernel_uo_lebesgue(&x, u).is_finite());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn annuli_partition_global_pairs(m in planar(), x in point(2, 4.0), u in point(2, 4.0), lt in -4.0f64..1.5) {
        let t = 10f64.powf(lt);
        let idx = annulus_index(&m, t, &x, &u).unwrap();
        if linalg::dist(&x, &u) <= local_radius(&x) {
            prop_assert!(idx.is_none());
        } else {
            let idx = idx.unwrap();
            let c = m.d(-t).unwrap() * linalg::Vector::from_column_slice(&x);
            let w = linalg::dist(&u, c.as_slice());
            let rho = t.sqrt().min(1.0);
            let matches: Vec<u32> = (0..64u32)
                .filter(|&k| {
                    let upper = rho * 2f64.powi(k as i32);
                    if k == 0 { w <= upper } else { w > upper / 2.0 && w <= upper }
                })
                .collect();
            prop_assert_eq!(matches, vec![idx.m]);
        }
    }

    #[test]
    fn positivity_preserved((m, x) in with_point(2.5), t in 0.05f64..4.0) {
        let n = m.dim;
        prop_assume!(n <= 2);
        let f = TestFunction::Indicator { center: vec![0.3; n], radius: 0.6, weight: 1.0 };
        let v = apply_kernel(&m, &f, t, &x, &QuadratureSpec::tensor(24)).unwrap();
        prop_assert!(v.value >= -1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn level_sets_shrink_as_level_rises(m in planar(), a in 1e-3f64..0.5, ratio in 1.01f64..10.0) {
        let (lo, hi) = (vec![-6.0, -6.0], vec![6.0, 6.0]);
        let f = |x: &[f64]| (-m.r(x) - 0.1 * x[0]).exp();
        let low = level_set_measure(&m, f, a / ratio, &lo, &hi, 240).unwrap();
        let high = level_set_measure(&m, f, a, &lo, &hi, 240).unwrap();
        prop_assert!(high.measure <= low.measure * (1.0 + 1e-12));
    }
}

#[test]
fn level_sets_add_over_quadrants() {
    let m = Model::preset("nonnormal2d").unwrap();
    let f = |x: &[f64]| (-m.r(x) - 0.1 * x[0]).exp();
    for a in [1e-3, 1e-2, 0.1] {
        let whole = level_set_measure(&m, f, a, &[-6.0, -6.0], &[6.0, 6.0], 240).unwrap();
        let sum: f64 = [(-6.0, -6.0), (0.0, -6.0), (-6.0, 0.0), (0.0, 0.0)]
            .iter()
            .map(|&(x, y)| level_set_measure(&m, f, a, &[x, y], &[x + 6.0, y + 6.0], 120).unwrap().measure)
            .sum();
        assert!((sum - whole.measure).abs() <= 1e-9 * whole.measure, "{sum} vs {}", whole.measure);
    }
}
