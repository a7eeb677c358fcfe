//! Two-sample Kolmogorov–Smirnov test.
//!
//! The statistic is exact (merged sweep over both sorted samples, ties
//! advanced together). The p-value uses the asymptotic Kolmogorov
//! distribution at the effective size `n*m/(n+m)` with Stephens' correction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest p-value ever reported.
pub const P_VALUE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::domain("KS test needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::domain("KS test input contains NaN"));
    }
    let statistic = ks_statistic(x, y);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let effective = n * m / (n + m);
    let root = effective.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * statistic;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(lambda),
    })
}

fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// `Q(lambda) = P(K > lambda)` for the Kolmogorov distribution, clamped to
/// `[P_VALUE_FLOOR, 1]`.
///
/// For `lambda >= 1` the alternating series `2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`
/// is summed until a term drops below 1e-16. Below 1 that series converges
/// slowly, so the equivalent theta-function form of the CDF is used instead.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda >= 1.0 {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=200 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-16 {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    } else {
        let mut cdf = 0.0;
        for k in 1..=200 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * PI * PI / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < 1e-16 * cdf.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * cdf
    };
    q.clamp(P_VALUE_FLOOR, 1.0)
}
