//! Report assembly, validation and rendering.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exposure::{
    default_window, divergence_trajectory, exposure_shares, incidence, item_impressions,
    series_csv, window_count, ExposureShareSeries, Incidence,
};
use super::metrics::{amplification, gini, novel_exposure, shares, trend_slope, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::simulate::ExposureLog;

pub const REPORT_FORMAT: &str = "recaudit-risk-report/1";
const SHARE_TOL: f64 = 1e-9;

const NOTES: &[&str] = &[
    "Exposure shares count impressions: every slate position shown to a user is one impression of its item's category.",
    "Amplification is a cohort's exposure share divided by its mean initial interest share, with the denominator floored at epsilon. Categories with zero initial interest and nonzero exposure are listed as novel exposure.",
    "Item Gini is computed over per-item impression counts for every catalog item, including items never shown.",
    "Divergence is the base-2 Jensen-Shannon divergence between two cohorts' exposure shares in each window; windows where either cohort had no impressions are left blank.",
    "Trend slopes are least-squares slopes of each category's share against the window index, skipping empty windows.",
    "User incidence counts users shown at least one flagged item, over every user in scope, active or not.",
    "Marginal-pair cohorts differ only by a convex shift of initial interest toward the target category; their seed histories differ only through that shift.",
    "These metrics are operational choices for describing what was recommended; they are not calibrated harm scores.",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    /// Steps per window; defaults to `max(1, T / 20)`.
    #[serde(default)]
    pub window: Option<usize>,
    /// Categories whose incidence is reported.
    #[serde(default)]
    pub flagged: Vec<String>,
    /// Cohort pairs to compare. Defaults to every `X-ctrl`/`X-perturbed`
    /// pair, or the two cohorts when there are exactly two.
    #[serde(default)]
    pub cohort_pairs: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub k: usize,
    /// Simulated step range covered by the log; `None` for an empty log.
    pub first_step: Option<u64>,
    pub last_step: Option<u64>,
    pub window: usize,
    pub windows: usize,
    pub epsilon: f64,
    pub taxonomy: Vec<String>,
    pub flagged: Vec<String>,
    pub records: usize,
    pub impressions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortReport {
    pub name: String,
    pub size: usize,
    pub initial_interest_mean: Option<Vec<f64>>,
    pub series: ExposureShareSeries,
    /// Shares over the whole run; `None` when the cohort saw nothing.
    pub overall_shares: Option<Vec<f64>>,
    pub amplification: Option<Vec<f64>>,
    /// Amplification in the last window with impressions.
    pub final_amplification: Option<Vec<f64>>,
    pub novel_exposure: Vec<String>,
    /// Per category; `None` with fewer than two non-empty windows.
    pub trend_slopes: Vec<Option<f64>>,
    pub incidence: Incidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairDivergence {
    pub a: String,
    pub b: String,
    pub trajectory: Vec<Option<f64>>,
    pub first: Option<f64>,
    pub last: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemConcentration {
    pub overall_gini: f64,
    pub final_window_gini: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskReport {
    pub format: String,
    pub metadata: ReportMetadata,
    pub no_activity: bool,
    pub cohorts: Vec<CohortReport>,
    pub item_concentration: ItemConcentration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Vec<PairDivergence>>,
    pub incidence: Incidence,
    pub notes: Vec<String>,
}

fn default_pairs(names: &[&str]) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = names
        .iter()
        .filter_map(|n| {
            let base = n.strip_suffix("-ctrl")?;
            let other = format!("{base}-perturbed");
            names.contains(&other.as_str()).then(|| (n.to_string(), other))
        })
        .collect();
    if pairs.is_empty() && names.len() == 2 {
        pairs.push((names[0].to_string(), names[1].to_string()));
    }
    pairs
}

fn cohort_report(
    log: &ExposureLog,
    name: &str,
    window: usize,
    epsilon: f64,
    flagged: &[String],
) -> Result<CohortReport> {
    let summary = log.header.cohort(name).ok_or_else(|| Error::unknown("cohort", name))?;
    let series = exposure_shares(log, name, window)?;
    let dims = log.header.taxonomy.len();
    let mut totals = vec![0.0; dims];
    for r in log.records.iter().filter(|r| r.cohort == name) {
        for e in &r.slate {
            if let Some(c) = log.header.category_index(&e.cat) {
                totals[c] += 1.0;
            }
        }
    }
    let overall = shares(&totals);
    let interest = summary.initial_interest_mean.as_deref();
    let amp = |s: Option<&Vec<f64>>| -> Result<Option<Vec<f64>>> {
        match (s, interest) {
            (Some(s), Some(i)) => amplification(s, i, epsilon).map(Some),
            _ => Ok(None),
        }
    };
    let final_shares = series.last_nonempty().and_then(|r| r.shares.as_ref());
    let novel = match (&overall, interest) {
        (Some(s), Some(i)) => novel_exposure(s, i)
            .into_iter()
            .map(|c| log.header.taxonomy[c].clone())
            .collect(),
        _ => Vec::new(),
    };
    let trend_slopes = (0..dims)
        .map(|c| trend_slope(&series.category_series(c)).ok())
        .collect();
    Ok(CohortReport {
        name: name.to_string(),
        size: summary.size,
        initial_interest_mean: summary.initial_interest_mean.clone(),
        amplification: amp(overall.as_ref())?,
        final_amplification: amp(final_shares)?,
        overall_shares: overall,
        novel_exposure: novel,
        trend_slopes,
        incidence: incidence(log, flagged, Some(name))?,
        series,
    })
}

/// Assembles every metric for a log. The result depends on the log and
/// options only.
pub fn build_report(log: &ExposureLog, options: &ReportOptions) -> Result<RiskReport> {
    log.validate()?;
    let h = &log.header;
    let window = options.window.unwrap_or_else(|| default_window(h.steps));
    if window == 0 {
        return Err(Error::validation("report.window", "must be >= 1"));
    }
    let epsilon = options.epsilon.unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::validation("report.epsilon", "must be a finite number > 0"));
    }
    for (i, f) in options.flagged.iter().enumerate() {
        if h.category_index(f).is_none() {
            return Err(Error::validation(
                format!("report.flagged[{i}]"),
                format!("unknown category `{f}`"),
            ));
        }
    }
    let names: Vec<&str> = h.cohorts.iter().map(|c| c.name.as_str()).collect();
    let cohorts = names
        .par_iter()
        .map(|n| cohort_report(log, n, window, epsilon, &options.flagged))
        .collect::<Result<Vec<_>>>()?;

    let pairs = match &options.cohort_pairs {
        Some(p) => p.clone(),
        None => default_pairs(&names),
    };
    let divergence = if names.len() < 2 || pairs.is_empty() {
        None
    } else {
        let find = |i: usize, n: &str, side: usize| {
            cohorts.iter().find(|c| c.name == n).ok_or_else(|| {
                Error::validation(
                    format!("report.cohort_pairs[{i}][{side}]"),
                    format!("unknown cohort `{n}`"),
                )
            })
        };
        let mut out = Vec::with_capacity(pairs.len());
        for (i, (a, b)) in pairs.iter().enumerate() {
            let traj = divergence_trajectory(&find(i, a, 0)?.series, &find(i, b, 1)?.series)?;
            out.push(PairDivergence {
                a: a.clone(),
                b: b.clone(),
                first: traj.iter().flatten().next().copied(),
                last: traj.iter().flatten().last().copied(),
                trajectory: traj,
            });
        }
        Some(out)
    };

    let windows = window_count(h.steps, window);
    let last_active_window = log
        .records
        .iter()
        .rev()
        .find(|r| !r.slate.is_empty())
        .map(|r| (r.t as usize - 1) / window);
    let overall_counts = item_impressions(log, None);
    let impressions = overall_counts.iter().sum::<f64>() as u64;
    let item_concentration = if h.items.is_empty() {
        ItemConcentration { overall_gini: 0.0, final_window_gini: None }
    } else {
        ItemConcentration {
            overall_gini: gini(&overall_counts)?,
            final_window_gini: last_active_window
                .map(|w| gini(&item_impressions(log, Some((window, w)))))
                .transpose()?,
        }
    };

    Ok(RiskReport {
        format: REPORT_FORMAT.to_string(),
        metadata: ReportMetadata {
            config_hash: h.config_hash.clone(),
            seed: h.seed,
            steps: h.steps,
            k: h.k,
            first_step: log.records.first().map(|r| r.t),
            last_step: log.records.last().map(|r| r.t),
            window,
            windows,
            epsilon,
            taxonomy: h.taxonomy.clone(),
            flagged: options.flagged.clone(),
            records: log.records.len(),
            impressions,
        },
        no_activity: impressions == 0,
        cohorts,
        item_concentration,
        divergence,
        incidence: incidence(log, &options.flagged, None)?,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl RiskReport {
    /// Checks the schema-level invariants a consumer may rely on.
    pub fn validate(&self) -> Result<()> {
        if self.format != REPORT_FORMAT {
            return Err(Error::validation("format", format!("expected `{REPORT_FORMAT}`")));
        }
        let m = &self.metadata;
        let dims = m.taxonomy.len();
        if m.window == 0 || m.windows != window_count(m.steps, m.window) {
            return Err(Error::validation("metadata.window", "inconsistent window count"));
        }
        for (ci, c) in self.cohorts.iter().enumerate() {
            let at = |f: &str| format!("cohorts[{ci}].{f}");
            if c.series.categories != m.taxonomy || c.series.window != m.window {
                return Err(Error::validation(at("series"), "taxonomy or window mismatch"));
            }
            if c.series.rows.len() != m.windows {
                return Err(Error::validation(at("series.rows"), "wrong number of windows"));
            }
            for (wi, r) in c.series.rows.iter().enumerate() {
                match &r.shares {
                    Some(s) => {
                        let sum: f64 = s.iter().sum();
                        if s.len() != dims || (sum - 1.0).abs() > SHARE_TOL || r.impressions == 0 {
                            return Err(Error::validation(
                                at(&format!("series.rows[{wi}].shares")),
                                format!("row does not sum to 1 (sum {sum})"),
                            ));
                        }
                    }
                    None if r.impressions != 0 => {
                        return Err(Error::validation(
                            at(&format!("series.rows[{wi}].shares")),
                            "missing shares for a window with impressions",
                        ))
                    }
                    None => {}
                }
            }
            if c.trend_slopes.len() != dims {
                return Err(Error::validation(at("trend_slopes"), "wrong length"));
            }
            let inc = &c.incidence;
            if ![inc.impression_fraction, inc.user_fraction, inc.chosen_fraction]
                .into_iter()
                .all(unit)
            {
                return Err(Error::validation(at("incidence"), "fractions must lie in [0, 1]"));
            }
        }
        for (pi, p) in self.divergence.iter().flatten().enumerate() {
            if p.trajectory.len() != m.windows || !p.trajectory.iter().flatten().copied().all(unit) {
                return Err(Error::validation(
                    format!("divergence[{pi}].trajectory"),
                    "values must lie in [0, 1], one per window",
                ));
            }
        }
        let g = &self.item_concentration;
        if !unit(g.overall_gini) || !g.final_window_gini.is_none_or(unit) {
            return Err(Error::validation("item_concentration", "gini must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Canonical serialized form (pretty json plus a trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let report: RiskReport = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::validation(e.path().to_string(), e.inner().to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn cohort(&self, name: &str) -> Option<&CohortReport> {
        self.cohorts.iter().find(|c| c.name == name)
    }

    /// Long-format time series of one cohort or all of them.
    pub fn timeseries_csv(&self, cohort: Option<&str>) -> Result<String> {
        if let Some(c) = cohort {
            self.cohort(c).ok_or_else(|| Error::unknown("cohort", c))?;
        }
        Ok(series_csv(
            self.cohorts
                .iter()
                .filter(|c| cohort.is_none_or(|n| n == c.name))
                .map(|c| &c.series),
        ))
    }

    /// Human-readable markdown rendering.
    pub fn render_markdown(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "# Recommendation risk report\n");
        let _ = writeln!(out, "- config hash: `{}`", m.config_hash);
        let _ = writeln!(out, "- seed: {}", m.seed);
        let _ = writeln!(out, "- steps: {} (slate size {})", m.steps, m.k);
        let _ = writeln!(out, "- window: {} steps, {} windows", m.window, m.windows);
        let _ = writeln!(out, "- impressions: {}", m.impressions);
        if !m.flagged.is_empty() {
            let _ = writeln!(out, "- flagged categories: {}", m.flagged.join(", "));
        }
        if self.no_activity {
            let _ = writeln!(out, "\n**No activity:** the log contains no impressions.");
        }

        let _ = writeln!(out, "\n## Overall\n");
        let g = &self.item_concentration;
        let _ = writeln!(out, "- item impression Gini: {:.4}", g.overall_gini);
        if let Some(f) = g.final_window_gini {
            let _ = writeln!(out, "- item impression Gini, final window: {f:.4}");
        }
        write_incidence(&mut out, &self.incidence, &m.flagged);

        for c in &self.cohorts {
            let _ = writeln!(out, "\n## Cohort `{}` ({} users)\n", c.name, c.size);
            let _ = writeln!(out, "| window | steps | impressions | {} |", m.taxonomy.join(" | "));
            let _ = writeln!(out, "|---|---|---|{}", "---|".repeat(m.taxonomy.len()));
            for r in &c.series.rows {
                let cells = match &r.shares {
                    Some(s) => s.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" | "),
                    None => vec!["(empty)"; m.taxonomy.len()].join(" | "),
                };
                let _ = writeln!(
                    out,
                    "| {} | {}-{} | {} | {} |",
                    r.window, r.first_step, r.last_step, r.impressions, cells
                );
            }
            let _ = writeln!(out, "\n| category | initial interest | overall share | amplification | final amplification | trend slope |");
            let _ = writeln!(out, "|---|---|---|---|---|---|");
            let cell = |v: Option<&Vec<f64>>, i: usize| v.map_or("-".to_string(), |v| format!("{:.3}", v[i]));
            for (i, cat) in m.taxonomy.iter().enumerate() {
                let slope = c.trend_slopes[i].map_or("-".to_string(), |s| format!("{s:+.4}"));
                let _ = writeln!(
                    out,
                    "| {cat} | {} | {} | {} | {} | {slope} |",
                    cell(c.initial_interest_mean.as_ref(), i),
                    cell(c.overall_shares.as_ref(), i),
                    cell(c.amplification.as_ref(), i),
                    cell(c.final_amplification.as_ref(), i),
                );
            }
            if !c.novel_exposure.is_empty() {
                let _ = writeln!(out, "\nNovel exposure: {}", c.novel_exposure.join(", "));
            }
            write_incidence(&mut out, &c.incidence, &m.flagged);
        }

        if let Some(pairs) = &self.divergence {
            let _ = writeln!(out, "\n## Cohort divergence\n");
            for p in pairs {
                let _ = writeln!(out, "`{}` vs `{}`\n", p.a, p.b);
                let _ = writeln!(out, "| window | JSD |");
                let _ = writeln!(out, "|---|---|");
                for (i, d) in p.trajectory.iter().enumerate() {
                    let v = d.map_or("(missing)".to_string(), |d| format!("{d:.4}"));
                    let _ = writeln!(out, "| {} | {v} |", i + 1);
                }
                let _ = writeln!(out);
            }
        }

        let _ = writeln!(out, "\n## Notes\n");
        for (i, n) in self.notes.iter().enumerate() {
            let _ = writeln!(out, "{}. {n}", i + 1);
        }
        out
    }
}

fn write_incidence(out: &mut String, inc: &Incidence, flagged: &[String]) {
    if flagged.is_empty() {
        return;
    }
    let _ = writeln!(
        out,
        "\nFlagged content: {:.2}% of impressions, {:.2}% of users exposed, {:.2}% of choices",
        100.0 * inc.impression_fraction,
        100.0 * inc.user_fraction,
        100.0 * inc.chosen_fraction
    );
}
