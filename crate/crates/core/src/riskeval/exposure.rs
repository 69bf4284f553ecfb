//! Aggregation of exposure logs into windowed category shares.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{js_divergence, shares};
use crate::error::{Error, Result};
use crate::rng::{self, Key};
use crate::simulate::{ExposureLog, Record};

/// Number of windows of `window` steps needed to cover `steps`.
pub fn window_count(steps: u64, window: usize) -> usize {
    (steps as usize).div_ceil(window.max(1))
}

/// Default window: `max(1, T / 20)`, giving at most ~20 time points.
pub fn default_window(steps: u64) -> usize {
    ((steps / 20) as usize).max(1)
}

fn window_of(t: u64, window: usize) -> usize {
    (t as usize - 1) / window
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowShares {
    /// 1-based window number.
    pub window: usize,
    pub first_step: u64,
    pub last_step: u64,
    pub impressions: u64,
    /// Category shares, or `None` for a window without impressions.
    pub shares: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureShareSeries {
    pub cohort: String,
    pub window: usize,
    pub categories: Vec<String>,
    pub rows: Vec<WindowShares>,
}

impl ExposureShareSeries {
    /// The share of one category per window (`None` for empty windows).
    pub fn category_series(&self, c: usize) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.shares.as_ref().map(|s| s[c]))
            .collect()
    }

    pub fn last_nonempty(&self) -> Option<&WindowShares> {
        self.rows.iter().rev().find(|r| r.shares.is_some())
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::validation("window", "must be >= 1"));
    }
    Ok(())
}

fn require_cohort(log: &ExposureLog, cohort: &str) -> Result<()> {
    log.header
        .cohort(cohort)
        .map(|_| ())
        .ok_or_else(|| Error::unknown("cohort", cohort))
}

fn cat_index(log: &ExposureLog, name: &str) -> Result<usize> {
    log.header
        .category_index(name)
        .ok_or_else(|| Error::unknown("category", name))
}

/// Impression shares per category for one cohort, `window` steps at a time.
pub fn exposure_shares(log: &ExposureLog, cohort: &str, window: usize) -> Result<ExposureShareSeries> {
    check_window(window)?;
    require_cohort(log, cohort)?;
    let h = &log.header;
    let n_windows = window_count(h.steps, window);
    let mut counts = vec![vec![0.0f64; h.taxonomy.len()]; n_windows];
    let mut totals = vec![0u64; n_windows];
    for r in log.records.iter().filter(|r| r.cohort == cohort) {
        let w = window_of(r.t, window);
        for e in &r.slate {
            counts[w][cat_index(log, &e.cat)?] += 1.0;
            totals[w] += 1;
        }
    }
    let rows = counts
        .iter()
        .zip(&totals)
        .enumerate()
        .map(|(w, (c, n))| WindowShares {
            window: w + 1,
            first_step: (w * window + 1) as u64,
            last_step: (((w + 1) * window) as u64).min(h.steps),
            impressions: *n,
            shares: shares(c),
        })
        .collect();
    Ok(ExposureShareSeries {
        cohort: cohort.to_string(),
        window,
        categories: h.taxonomy.clone(),
        rows,
    })
}

/// Long-format csv `cohort,window,category,share`. Empty windows have a
/// blank share.
pub fn series_csv<'a>(series: impl IntoIterator<Item = &'a ExposureShareSeries>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cohort", "window", "category", "share"]).expect("in-memory csv");
    for s in series {
        for r in &s.rows {
            for (ci, cat) in s.categories.iter().enumerate() {
                let share = r.shares.as_ref().map(|v| v[ci].to_string()).unwrap_or_default();
                w.write_record([s.cohort.as_str(), &r.window.to_string(), cat, &share])
                    .expect("in-memory csv");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

/// Per-window JSD between two cohorts' exposure shares. Windows where
/// either side has no impressions are `None`.
pub fn divergence_trajectory(
    a: &ExposureShareSeries,
    b: &ExposureShareSeries,
) -> Result<Vec<Option<f64>>> {
    if a.categories != b.categories {
        return Err(Error::validation(
            "categories",
            format!("taxonomy mismatch between `{}` and `{}`", a.cohort, b.cohort),
        ));
    }
    if a.window != b.window || a.rows.len() != b.rows.len() {
        return Err(Error::validation("window", "series windows are not aligned"));
    }
    a.rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| match (&x.shares, &y.shares) {
            (Some(p), Some(q)) => js_divergence(p, q).map(Some),
            _ => Ok(None),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    /// Flagged impressions over all impressions.
    pub impression_fraction: f64,
    /// Users shown at least one flagged item over all users in scope
    /// (the cohort size, or the whole population).
    pub user_fraction: f64,
    /// Flagged chosen items over all chosen items.
    pub chosen_fraction: f64,
}

/// Incidence of flagged categories, over the whole log or one cohort.
pub fn incidence(log: &ExposureLog, flagged: &[String], cohort: Option<&str>) -> Result<Incidence> {
    let flagged: BTreeSet<usize> = flagged
        .iter()
        .map(|c| cat_index(log, c))
        .collect::<Result<_>>()?;
    if let Some(c) = cohort {
        require_cohort(log, c)?;
    }
    let is_flagged = |cat: &str| log.header.category_index(cat).is_some_and(|i| flagged.contains(&i));
    let (mut imp, mut imp_f, mut ch, mut ch_f) = (0u64, 0u64, 0u64, 0u64);
    let mut shown: BTreeMap<&str, bool> = BTreeMap::new();
    for r in log.records.iter().filter(|r| cohort.is_none_or(|c| r.cohort == c)) {
        for e in &r.slate {
            imp += 1;
            let f = is_flagged(&e.cat);
            imp_f += u64::from(f);
            *shown.entry(r.user.as_str()).or_default() |= f;
        }
        if let Some(c) = &r.chosen {
            ch += 1;
            ch_f += u64::from(is_flagged(&r.slate[c.rank - 1].cat));
        }
    }
    let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let exposed = shown.values().filter(|v| **v).count() as u64;
    let users = match cohort {
        Some(c) => log.header.cohort(c).map_or(0, |s| s.size),
        None => log.header.population(),
    };
    Ok(Incidence {
        impression_fraction: frac(imp_f, imp),
        user_fraction: frac(exposed, users as u64),
        chosen_fraction: frac(ch_f, ch),
    })
}

/// Impressions per catalog item (header order), optionally restricted to
/// one window.
pub fn item_impressions(log: &ExposureLog, window: Option<(usize, usize)>) -> Vec<f64> {
    let index: BTreeMap<&str, usize> = log
        .header
        .items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut counts = vec![0.0; log.header.items.len()];
    let in_window = |r: &Record| window.is_none_or(|(size, w)| window_of(r.t, size) == w);
    for r in log.records.iter().filter(|r| in_window(r)) {
        for e in &r.slate {
            if let Some(&i) = index.get(e.item.as_str()) {
                counts[i] += 1.0;
            }
        }
    }
    counts
}

/// Label-permutation null for the JSD between two cohorts in one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullBand {
    pub observed: f64,
    pub null_mean: f64,
    pub null_sd: f64,
}

impl NullBand {
    /// Upper edge of the band: null mean plus four null standard deviations.
    pub fn upper(&self) -> f64 {
        self.null_mean + 4.0 * self.null_sd
    }

    pub fn contains_observed(&self) -> bool {
        self.observed <= self.upper()
    }
}

/// Pools the users of cohorts `a` and `b` that had impressions in window
/// `w` (0-based), reassigns cohort labels at random (keeping group sizes)
/// `n_perm` times, and reports the distribution of the resulting JSDs.
pub fn permutation_null(
    log: &ExposureLog,
    a: &str,
    b: &str,
    window: usize,
    w: usize,
    n_perm: usize,
    seed: u64,
) -> Result<NullBand> {
    check_window(window)?;
    require_cohort(log, a)?;
    require_cohort(log, b)?;
    let dims = log.header.taxonomy.len();
    let mut per_user: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in log.records.iter().filter(|r| window_of(r.t, window) == w) {
        if r.cohort != a && r.cohort != b {
            continue;
        }
        let v = per_user
            .entry((r.cohort.as_str(), r.user.as_str()))
            .or_insert_with(|| vec![0.0; dims]);
        for e in &r.slate {
            v[cat_index(log, &e.cat)?] += 1.0;
        }
    }
    let users: Vec<(bool, Vec<f64>)> = per_user
        .into_iter()
        .filter(|(_, v)| v.iter().sum::<f64>() > 0.0)
        .map(|((c, _), v)| (c == a, v))
        .collect();
    let split_jsd = |labels: &[bool]| -> Option<f64> {
        let mut pa = vec![0.0; dims];
        let mut pb = vec![0.0; dims];
        for (is_a, (_, v)) in labels.iter().zip(&users) {
            let dst = if *is_a { &mut pa } else { &mut pb };
            for (d, x) in dst.iter_mut().zip(v) {
                *d += x;
            }
        }
        Some(js_divergence(&shares(&pa)?, &shares(&pb)?).ok()?)
    };
    let mut labels: Vec<bool> = users.iter().map(|(l, _)| *l).collect();
    let observed = split_jsd(&labels).ok_or_else(|| {
        Error::validation("window", format!("window {} has no impressions for both cohorts", w + 1))
    })?;
    let mut rng = rng::substream(seed, &[Key::Str("permutation-null"), Key::from(w)]);
    let mut samples = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        labels.shuffle(&mut rng);
        if let Some(d) = split_jsd(&labels) {
            samples.push(d);
        }
    }
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(NullBand {
        observed,
        null_mean: mean,
        null_sd: var.sqrt(),
    })
}
