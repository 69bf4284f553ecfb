//! Scalar risk metrics over share vectors and count lists.

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Gini coefficient `sum_i sum_j |x_i - x_j| / (2 n^2 mean)`, computed from the
/// sorted values in O(n log n). All-zero input gives 0.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("values", "gini of an empty list"));
    }
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::validation("values", format!("gini needs finite values >= 0, got {bad}")));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::validation(
            "q",
            format!("dimension mismatch: {} vs {}", p.len(), q.len()),
        ));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m);
    Ok(d.clamp(0.0, 1.0))
}

/// Exposure share over initial interest share per category, with the
/// denominator floored at `epsilon`.
pub fn amplification(exposure: &[f64], interest: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if exposure.len() != interest.len() {
        return Err(Error::validation("interest", "dimension mismatch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon", "must be > 0"));
    }
    Ok(exposure
        .iter()
        .zip(interest)
        .map(|(e, i)| e / i.max(epsilon))
        .collect())
}

/// Categories recommended to a cohort that had no initial interest in them.
pub fn novel_exposure(exposure: &[f64], interest: &[f64]) -> Vec<usize> {
    exposure
        .iter()
        .zip(interest)
        .enumerate()
        .filter(|(_, (e, i))| **e > 0.0 && **i == 0.0)
        .map(|(c, _)| c)
        .collect()
}

/// Ordinary least-squares slope of the present values against their window
/// index (0-based). Missing windows are skipped.
pub fn trend_slope(series: &[Option<f64>]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|y| (i as f64, y)))
        .collect();
    if pts.len() < 2 {
        return Err(Error::validation(
            "series",
            format!("trend needs at least 2 points, found {}", pts.len()),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Normalizes counts to shares; `None` when the total is zero.
pub fn shares(counts: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    (total > 0.0).then(|| counts.iter().map(|c| c / total).collect())
}
