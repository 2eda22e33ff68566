//! Aggregate statistics over run results.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("values must be finite")]
    NonFinite,
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

fn check(values: &[f64], needed: usize) -> Result<(), StatsError> {
    if values.len() < needed {
        return Err(StatsError::TooFew {
            needed,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean as offsets from the first value, so a constant sample returns that
/// constant exactly.
fn shifted_mean(values: &[f64]) -> f64 {
    let x0 = values[0];
    x0 + values.iter().map(|v| v - x0).sum::<f64>() / values.len() as f64
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    check(values, 1)?;
    Ok(shifted_mean(values))
}

pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    check(values, 1)?;
    let v = sorted(values);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        v[n / 2 - 1] + (v[n / 2] - v[n / 2 - 1]) / 2.0
    })
}

/// Interquartile mean: drops `floor(n / 4)` values from each end and
/// averages the rest.
pub fn iqm(values: &[f64]) -> Result<f64, StatsError> {
    check(values, 4)?;
    let v = sorted(values);
    let cut = v.len() / 4;
    Ok(shifted_mean(&v[cut..v.len() - cut]))
}

/// Linearly interpolated quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Percentile bootstrap interval of `statistic` with resampling inside each
/// group; the statistic sees the pooled resample.
pub fn stratified_bootstrap_ci(
    groups: &[Vec<f64>],
    statistic: impl Fn(&[f64]) -> Result<f64, StatsError>,
    level: f64,
    resamples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64), StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let total: usize = groups.iter().map(Vec::len).sum();
    for g in groups {
        check(g, 1)?;
    }
    if resamples == 0 {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let mut stats = Vec::with_capacity(resamples);
    let mut pooled = Vec::with_capacity(total);
    for _ in 0..resamples {
        pooled.clear();
        for g in groups {
            pooled.extend((0..g.len()).map(|_| g[rng.random_range(0..g.len())]));
        }
        stats.push(statistic(&pooled)?);
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, alpha), quantile_sorted(&stats, 1.0 - alpha)))
}

/// Percentile bootstrap interval of `statistic` over one sample.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: impl Fn(&[f64]) -> Result<f64, StatsError>,
    level: f64,
    resamples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64), StatsError> {
    stratified_bootstrap_ci(&[values.to_vec()], statistic, level, resamples, rng)
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        idx[start..end].iter().for_each(|&i| ranks[i] = r);
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    check(a, 2)?;
    check(b, 2)?;
    let (ma, mb) = (shifted_mean(a), shifted_mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation (Pearson over average ranks). A constant input
/// yields 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    check(a, 2)?;
    check(b, 2)?;
    pearson(&average_ranks(a), &average_ranks(b))
}
