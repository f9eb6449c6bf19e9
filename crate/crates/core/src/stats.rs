//! Correlation, significance and percentile-bootstrap machinery.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub n: usize,
    pub p_two_sided: f64,
    pub r_squared: f64,
}

impl CorrelationReport {
    pub fn from_r(r: f64, n: usize) -> Self {
        let r = r.clamp(-1.0, 1.0);
        CorrelationReport {
            r,
            n,
            p_two_sided: correlation_p_value(r, n),
            r_squared: r * r,
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::domain(format!(
            "correlation needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Product-moment correlation without the significance test; `None` when
/// either series is constant or the lengths disagree.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    // Exactly collinear data can land one ulp short of ±1.
    if (1.0 - r.abs()) < 4.0 * f64::EPSILON {
        return Some(r.signum());
    }
    Some(r)
}

/// Pearson correlation with a two-sided t-test on `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    check_pair(x, y)?;
    let r = pearson_r(x, y)
        .ok_or_else(|| Error::domain("correlation undefined for a constant series"))?;
    Ok(CorrelationReport::from_r(r, x.len()))
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on mean-ranked data.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided p-value of a correlation coefficient `r` on `n` pairs.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    // t^2 = r^2 df / (1 - r^2); p = I_{df/(df+t^2)}(df/2, 1/2) = I_{1-r^2}(df/2, 1/2)
    regularized_incomplete_beta(df / 2.0, 0.5, one_minus)
}

/// Two-sided p-value of Student's t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_continued_fraction(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Linear-interpolation quantile (`q` in [0, 1]) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub low: f64,
    pub high: f64,
    pub median: f64,
    pub level: f64,
    pub replicates: usize,
}

/// Percentile bootstrap interval of `statistic` over resamples of `units`
/// drawn with replacement.
///
/// Replicate `i` uses an RNG derived from `(seed, i)`, so the result does not
/// depend on the thread count. A replicate on which the statistic is
/// undefined (`None`) is replaced by a fresh draw, up to `10 * reps`
/// attempts in total.
pub fn bootstrap_ci<T, F>(
    units: &[T],
    statistic: F,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    if units.len() < 2 {
        return Err(Error::domain("bootstrap needs at least 2 units"));
    }
    if reps < 100 {
        return Err(Error::domain("bootstrap needs at least 100 replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain("confidence level must lie in (0, 1)"));
    }
    let n = units.len();
    let max_attempts = 10 * reps;
    let mut values: Vec<f64> = Vec::with_capacity(reps);
    let mut next_attempt = 0;
    while values.len() < reps && next_attempt < max_attempts {
        let end = (next_attempt + (reps - values.len())).min(max_attempts);
        let batch: Vec<Option<f64>> = (next_attempt..end)
            .into_par_iter()
            .map(|attempt| {
                let mut rng = rng_for(seed, &[attempt as u64]);
                let sample: Vec<&T> = (0..n).map(|_| &units[rng.random_range(0..n)]).collect();
                statistic(&sample).filter(|v| v.is_finite())
            })
            .collect();
        values.extend(batch.into_iter().flatten());
        next_attempt = end;
    }
    if values.len() < reps {
        return Err(Error::domain(format!(
            "statistic undefined on too many resamples ({} of {max_attempts} usable)",
            values.len()
        )));
    }
    values.truncate(reps);
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        low: quantile_sorted(&values, tail),
        high: quantile_sorted(&values, 1.0 - tail),
        median: quantile_sorted(&values, 0.5),
        level,
        replicates: reps,
    })
}
