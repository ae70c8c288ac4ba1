//! Shared statistical machinery: batch-means standard errors, effective
//! sample sizes, two-sample Kolmogorov-Smirnov, least-squares fits with
//! slope uncertainty, Richardson extrapolation, and the crate's seeding
//! scheme for reproducible parallel RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of batches used by every batch-means standard error in the crate.
pub const BATCH_COUNT: usize = 32;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    /// Exact value with zero statistical error.
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }
}

/// Deterministic per-task RNG: one master seed, one ChaCha stream per task
/// index. Streams are statistically independent and the mapping is a pure
/// function of `(seed, stream)`, so any parallel schedule reproduces the
/// same draws.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean of a correlated series with a batch-means standard error over
/// [`BATCH_COUNT`] equal batches (trailing remainder folded into the last
/// batch). With fewer points than batches the SE falls back to the naive
/// independent-sample formula.
pub fn mean_se(values: &[f64]) -> Estimate {
    weighted_mean_se(values, None)
}

/// Weighted version of [`mean_se`]: the estimator is
/// `sum w_i v_i / sum w_i`, and the SE comes from the spread of per-batch
/// ratio estimates. `weights = None` means uniform weights.
pub fn weighted_mean_se(values: &[f64], weights: Option<&[f64]>) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let wsum = |range: std::ops::Range<usize>| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in range {
            let w = weights.map_or(1.0, |w| w[i]);
            num += w * values[i];
            den += w;
        }
        (num, den)
    };
    let (num, den) = wsum(0..n);
    let mean = num / den;
    if n < 2 * BATCH_COUNT {
        // Too short for stable batching: naive SE (weighted via an
        // effective-sample-size correction).
        let mut var = 0.0;
        let mut w2 = 0.0;
        for i in 0..n {
            let w = weights.map_or(1.0, |w| w[i]);
            var += w * (values[i] - mean).powi(2);
            w2 += w * w;
        }
        let neff = den * den / w2.max(f64::MIN_POSITIVE);
        let var = var / den.max(f64::MIN_POSITIVE);
        return Estimate::new(mean, (var / neff.max(1.0)).sqrt());
    }
    let b = BATCH_COUNT;
    let per = n / b;
    let mut batch_means = Vec::with_capacity(b);
    for k in 0..b {
        let lo = k * per;
        let hi = if k + 1 == b { n } else { (k + 1) * per };
        let (bn, bd) = wsum(lo..hi);
        if bd > 0.0 {
            batch_means.push(bn / bd);
        }
    }
    let bm = batch_means.iter().sum::<f64>() / batch_means.len() as f64;
    let var = batch_means
        .iter()
        .map(|v| (v - bm).powi(2))
        .sum::<f64>()
        / (batch_means.len().saturating_sub(1)) as f64;
    Estimate::new(mean, (var / batch_means.len() as f64).sqrt())
}

/// Effective sample size of a correlated scalar series, using the
/// initial-positive-sequence truncation: autocorrelations are summed in
/// adjacent pairs until a pair sum goes non-positive.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return n as f64;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let max_lag = (n / 2).min(2000);
    let auto = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (values[i] - mean) * (values[i + lag] - mean);
        }
        s / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 <= max_lag {
        let pair = auto(lag) + auto(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).clamp(1.0, n as f64)
}

/// Two-sample Kolmogorov-Smirnov test. Returns the statistic `D` and the
/// asymptotic p-value `Q_KS((sqrt(ne) + 0.12 + 0.11/sqrt(ne)) D)` with
/// `ne = n1 n2 / (n1 + n2)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 8 || b.len() < 8 {
        return Err(Error::Domain(
            "Kolmogorov-Smirnov needs at least 8 points per sample".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|u, v| u.total_cmp(v));
    sb.sort_by(|u, v| u.total_cmp(v));
    let (na, nb) = (sa.len(), sb.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while ia < na && ib < nb {
        let xa = sa[ia];
        let xb = sb[ib];
        let x = xa.min(xb);
        while ia < na && sa[ia] <= x {
            ia += 1;
        }
        while ib < nb && sb[ib] <= x {
            ib += 1;
        }
        let fa = ia as f64 / na as f64;
        let fb = ib as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// Kolmogorov tail function `Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares `y ~ intercept + slope * x` with slope standard
/// error and coefficient of determination.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Domain(
            "linear fit needs >= 3 matched points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Domain("linear fit with degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| (v - intercept - slope * u).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let dof = (x.len() - 2).max(1) as f64;
    let slope_se = (ss_res / dof / sxx).sqrt();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        r2,
    })
}

/// One Richardson-extrapolation step for a quantity sampled on a halving
/// ladder `v(eps), v(eps/2), ...` assumed to satisfy
/// `v(eps) = v* + c eps^order + o(eps^order)`.
///
/// The order is estimated from the last three rungs when they allow it and
/// falls back to `default_order` (first order by default). Returns the
/// extrapolated value together with the order actually used.
pub fn richardson_extrapolate(ladder: &[f64], default_order: f64) -> Result<(f64, f64)> {
    if ladder.len() < 2 {
        return Err(Error::Domain(
            "Richardson extrapolation needs at least two rungs".into(),
        ));
    }
    let k = ladder.len();
    let mut order = default_order;
    if k >= 3 {
        let d1 = ladder[k - 2] - ladder[k - 3];
        let d2 = ladder[k - 1] - ladder[k - 2];
        if d1.abs() > 0.0 && d2.abs() > 0.0 && (d1 / d2) > 1.0 {
            let est = (d1 / d2).log2();
            if est.is_finite() && est > 0.25 && est < 4.0 {
                order = est;
            }
        }
    }
    let f = 2f64.powf(order);
    let value = (f * ladder[k - 1] - ladder[k - 2]) / (f - 1.0);
    Ok((value, order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    #[test]
    fn batch_means_on_iid_matches_naive() {
        let mut rng = stream_rng(1, 0);
        let vals: Vec<f64> = (0..32_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let est = mean_se(&vals);
        assert_abs_diff_eq!(est.value, 0.5, epsilon = 0.01);
        // Naive SE of U(0,1): sqrt(1/12/n) ~ 0.00161; batch means should be close.
        assert!((est.se - (1.0f64 / 12.0 / 32_000.0).sqrt()).abs() < 8e-4);
    }

    #[test]
    fn weighted_mean_recovers_reweighted_target() {
        // Weights e^{-x} against uniform values on a grid approximate the
        // mean of the exponential-tilted distribution.
        let n = 200_000;
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let w: Vec<f64> = vals.iter().map(|x| (-x).exp()).collect();
        let est = weighted_mean_se(&vals, Some(&w));
        // int x e^-x / int e^-x over [0,1].
        let num = 1.0 - 2.0 * (-1.0f64).exp();
        let den = 1.0 - (-1.0f64).exp();
        assert_abs_diff_eq!(est.value, num / den, epsilon = 1e-4);
    }

    #[test]
    fn ess_detects_correlation() {
        let mut rng = stream_rng(2, 0);
        let mut x = 0.0;
        let ar: Vec<f64> = (0..20_000)
            .map(|_| {
                x = 0.9 * x + rng.sample::<f64, _>(rand_distr::StandardNormal);
                x
            })
            .collect();
        let ess = effective_sample_size(&ar);
        // AR(1) with rho = 0.9 has tau = (1+rho)/(1-rho) = 19.
        assert!(ess < 3000.0, "ess = {ess}");
        assert!(ess > 500.0, "ess = {ess}");
        let iid: Vec<f64> = (0..20_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        assert!(effective_sample_size(&iid) > 10_000.0);
    }

    #[test]
    fn ks_separates_shifted_samples() {
        let mut rng = stream_rng(3, 0);
        let a: Vec<f64> = (0..4000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let b: Vec<f64> = (0..4000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let c: Vec<f64> = b.iter().map(|v| v + 0.25).collect();
        let (_, p_same) = ks_two_sample(&a, &b).unwrap();
        let (_, p_diff) = ks_two_sample(&a, &c).unwrap();
        assert!(p_same > 0.01, "p_same = {p_same}");
        assert!(p_diff < 1e-6, "p_diff = {p_diff}");
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.slope, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 2.0, epsilon = 1e-10);
        assert!(fit.slope_se < 1e-12);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn richardson_kills_first_order_error() {
        // v(eps) = 1 + eps on a halving ladder starting at eps = 0.4.
        let ladder: Vec<f64> = (0..4).map(|j| 1.0 + 0.4 / 2f64.powi(j)).collect();
        let (v, order) = richardson_extrapolate(&ladder, 1.0).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(order, 1.0, epsilon = 0.05);
    }

    #[test]
    fn stream_rng_is_stable_and_split() {
        let a: Vec<u64> = {
            let mut r = stream_rng(42, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let b: Vec<u64> = {
            let mut r = stream_rng(42, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let c: Vec<u64> = {
            let mut r = stream_rng(42, 1);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
