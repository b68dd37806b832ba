//! Empirical growth envelopes of the flow `D_t`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Model;
use crate::par;
use rand_distr::{Distribution, StandardNormal};

/// Fitted exponents and ratio envelopes for `|D_t x|` and `|x - D_t x|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    /// Lower exponent: `e^{ct}|x| <~ |D_t x|` for `t >= 1`.
    pub c: f64,
    /// Upper exponent: `|D_t x| <~ e^{Ct}|x|`.
    pub cap_c: f64,
    /// `min |D_t x| / (e^{ct}|x|)` over samples and `t` in `(0, 10]`.
    pub lower_ratio_min: f64,
    /// `max |D_t x| / (e^{Ct}|x|)`.
    pub upper_ratio_max: f64,
    /// Range of `|x - D_t x| / (t|x|)` over `t` in `(0, 1]`.
    pub near_identity_min: f64,
    pub near_identity_max: f64,
    pub sample_count: usize,
    pub seed: u64,
}

pub fn small_time_grid() -> Vec<f64> {
    (0..=40).map(|k| 10f64.powf(-4.0 + 0.1 * k as f64)).collect()
}

pub fn large_time_grid() -> Vec<f64> {
    (0..=18).map(|k| 1.0 + 0.5 * k as f64).collect()
}

/// Draws a unit vector; the zero vector is never returned.
pub fn random_unit<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let r = linalg::norm(&v);
        if r > 1e-8 {
            return v.iter().map(|x| x / r).collect();
        }
    }
}

pub fn fit_growth_constants(model: &Model, sample_count: usize, seed: u64) -> Result<GrowthReport> {
    if sample_count < 100 {
        return Err(Error::InvalidArgument("sample count must be at least 100".into()));
    }
    let n = model.dim;
    let small = small_time_grid();
    let large = large_time_grid();
    let d_small = small.iter().map(|&t| model.d(t)).collect::<Result<Vec<_>>>()?;
    let dm_small = small.iter().map(|&t| model.d_minus_identity(t)).collect::<Result<Vec<_>>>()?;
    let d_large = large.iter().map(|&t| model.d(t)).collect::<Result<Vec<_>>>()?;
    let mut rng = par::stream_rng(seed, 0);
    let xs: Vec<Vec<f64>> = (0..sample_count).map(|_| random_unit(&mut rng, n)).collect();

    let apply = |m: &linalg::Mat, x: &[f64]| {
        let mut y = vec![0.0; n];
        linalg::matvec(m.as_slice(), n, x, &mut y);
        linalg::norm(&y)
    };
    // Per-sample log growth on both grids.
    let logs_small: Vec<Vec<f64>> = xs.iter().map(|x| d_small.iter().map(|d| apply(d, x).ln()).collect()).collect();
    let logs_large: Vec<Vec<f64>> = xs.iter().map(|x| d_large.iter().map(|d| apply(d, x).ln()).collect()).collect();

    let tm = large.iter().sum::<f64>() / large.len() as f64;
    let stt: f64 = large.iter().map(|t| (t - tm) * (t - tm)).sum();
    let slopes: Vec<f64> = logs_large
        .iter()
        .map(|l| {
            let lm = l.iter().sum::<f64>() / l.len() as f64;
            large.iter().zip(l).map(|(t, v)| (t - tm) * (v - lm)).sum::<f64>() / stt
        })
        .collect();
    let c = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let cap_c = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for (ls, ll) in logs_small.iter().zip(&logs_large) {
        for (&t, &v) in small.iter().zip(ls).chain(large.iter().zip(ll)) {
            lower = lower.min(v - c * t);
            upper = upper.max(v - cap_c * t);
        }
    }
    let mut near_min = f64::INFINITY;
    let mut near_max = f64::NEG_INFINITY;
    for x in &xs {
        for (&t, dm) in small.iter().zip(&dm_small) {
            let r = apply(dm, x) / t;
            near_min = near_min.min(r);
            near_max = near_max.max(r);
        }
    }
    let report = GrowthReport {
        c,
        cap_c,
        lower_ratio_min: lower.exp(),
        upper_ratio_max: upper.exp(),
        near_identity_min: near_min,
        near_identity_max: near_max,
        sample_count,
        seed,
    };
    let ok = [report.lower_ratio_min, report.near_identity_min].iter().all(|v| v.is_finite() && *v > 0.0)
        && [report.upper_ratio_max, report.near_identity_max].iter().all(|v| v.is_finite());
    if !ok {
        return Err(Error::DegenerateSample("growth ratios not bounded away from 0 and infinity".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::build_model;

    #[test]
    fn scalar_growth_is_exact() {
        let m = Model::preset("salogni1d").unwrap();
        let r = fit_growth_constants(&m, 100, 1).unwrap();
        assert!((r.c - 1.0).abs() < 1e-10 && (r.cap_c - 1.0).abs() < 1e-10);
        assert!(r.near_identity_min >= 1.0 - 1e-12);
        assert!(r.near_identity_max <= std::f64::consts::E - 1.0 + 1e-12);
    }

    #[test]
    fn nonnormal_envelope_is_finite() {
        let m = build_model(Mat::identity(2, 2), Mat::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -1.0])).unwrap();
        let r = fit_growth_constants(&m, 200, 3).unwrap();
        assert!(r.c > 0.0 && r.cap_c >= r.c);
        assert!(r.lower_ratio_min > 0.0 && r.upper_ratio_max.is_finite());
        assert!(r.near_identity_min > 0.0);
    }
}
