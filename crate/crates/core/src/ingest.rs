//! Interaction logs, content catalogs and the empirical statistics derived
//! from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::Taxonomy;
use crate::error::{Error, Result};

pub const DEFAULT_BIN_SECONDS: i64 = 86_400;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_label: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    #[default]
    View,
    Like,
    Comment,
}

impl std::str::FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "" | "view" => Ok(EventType::View),
            "like" => Ok(EventType::Like),
            "comment" => Ok(EventType::Comment),
            other => Err(format!("unknown event type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    #[serde(default)]
    pub event_type: EventType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::validation(
                "format",
                format!("unknown format `{other}` (expected csv or jsonl)"),
            )),
        }
    }
}

impl Format {
    /// Guesses from the file extension; anything but `.jsonl`/`.json` is csv.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

/// Maps source column names to the canonical field names, e.g.
/// `{"user": "user_id", "video_id": "item_id"}`. Unmapped columns keep their
/// names.
pub type ColumnMap = BTreeMap<String, String>;

const EVENT_FIELDS: [&str; 4] = ["user_id", "item_id", "timestamp", "event_type"];
const ITEM_FIELDS: [&str; 3] = ["item_id", "title", "category_label"];

/// A parsed row as (physical line, canonical field → raw value).
type Row = (usize, HashMap<String, String>);

fn read_rows(
    path: &Path,
    format: Format,
    column_map: &ColumnMap,
    fields: &[&str],
    required: &[&str],
) -> Result<Vec<Row>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rename = |name: &str| -> String {
        column_map
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    };
    let perr = |line: usize, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let mut rows = Vec::new();
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(text.as_bytes());
            let mut header: Option<Vec<String>> = None;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    perr(line, "row", e.to_string())
                })?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                let names = match &header {
                    Some(h) => h,
                    None => {
                        let cand: Vec<String> = rec.iter().map(|f| rename(f.trim())).collect();
                        let hits = required.iter().filter(|r| cand.iter().any(|c| c == *r)).count();
                        if hits == 0 {
                            // headerless: positional canonical order
                            header = Some(fields.iter().map(|s| s.to_string()).collect());
                        } else {
                            if let Some(missing) =
                                required.iter().find(|r| !cand.iter().any(|c| c == *r))
                            {
                                return Err(Error::validation(
                                    *missing,
                                    format!("{}: required column `{missing}` is not mapped", path.display()),
                                ));
                            }
                            header = Some(cand);
                            continue;
                        }
                        header.as_ref().unwrap()
                    }
                };
                if rec.len() > names.len() {
                    return Err(perr(line, "row", format!("expected at most {} fields, found {}", names.len(), rec.len())));
                }
                let mut row = HashMap::new();
                for (name, value) in names.iter().zip(rec.iter()) {
                    row.insert(name.clone(), value.to_string());
                }
                rows.push((line, row));
            }
        }
        Format::Jsonl => {
            for (i, raw) in text.lines().enumerate() {
                let line = i + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, Value> = serde_json::from_str(raw)
                    .map_err(|e| perr(line, "row", e.to_string()))?;
                let mut row = HashMap::new();
                for (k, v) in obj {
                    let s = match v {
                        Value::String(s) => s,
                        Value::Null => continue,
                        other => other.to_string(),
                    };
                    row.insert(rename(&k), s);
                }
                rows.push((line, row));
            }
        }
    }
    for (line, row) in &rows {
        for r in required {
            if !row.contains_key(*r) {
                return Err(perr(*line, r, "missing required field".into()));
            }
        }
    }
    Ok(rows)
}

/// Loads an interaction log, preserving file order. Csv files may carry a
/// header (`user_id,item_id,timestamp[,event_type]`, after `column_map`
/// renaming) or be headerless in that column order. Parse errors report the
/// physical line number.
pub fn load_interactions(
    path: &Path,
    format: Format,
    column_map: &ColumnMap,
) -> Result<Vec<InteractionEvent>> {
    let rows = read_rows(
        path,
        format,
        column_map,
        &EVENT_FIELDS,
        &["user_id", "item_id", "timestamp"],
    )?;
    let perr = |line: usize, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    rows.into_iter()
        .map(|(line, row)| {
            let user_id = row["user_id"].trim().to_string();
            if user_id.is_empty() {
                return Err(perr(line, "user_id", "empty".into()));
            }
            let item_id = row["item_id"].trim().to_string();
            if item_id.is_empty() {
                return Err(perr(line, "item_id", "empty".into()));
            }
            let ts_raw = row["timestamp"].trim();
            let timestamp: i64 = ts_raw
                .parse()
                .ok()
                .filter(|t: &i64| *t >= 0)
                .ok_or_else(|| {
                    perr(line, "timestamp", format!("`{ts_raw}` is not a non-negative integer"))
                })?;
            let event_type = match row.get("event_type") {
                Some(s) => s.parse().map_err(|m| perr(line, "event_type", m))?,
                None => EventType::View,
            };
            Ok(InteractionEvent {
                user_id,
                item_id,
                timestamp,
                event_type,
            })
        })
        .collect()
}

/// Loads a content catalog. A missing title column yields empty titles.
pub fn load_catalog(path: &Path, format: Format) -> Result<Vec<ItemRecord>> {
    load_catalog_mapped(path, format, &ColumnMap::new())
}

pub fn load_catalog_mapped(
    path: &Path,
    format: Format,
    column_map: &ColumnMap,
) -> Result<Vec<ItemRecord>> {
    let rows = read_rows(path, format, column_map, &ITEM_FIELDS, &["item_id"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let item_id = row["item_id"].trim().to_string();
        if item_id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                field: "item_id".into(),
                message: "empty".into(),
            });
        }
        if !seen.insert(item_id.clone()) {
            return Err(Error::Duplicate {
                kind: "item_id",
                id: item_id,
            });
        }
        let category_label = row
            .get("category_label")
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        out.push(ItemRecord {
            item_id,
            title: row.get("title").cloned().unwrap_or_default(),
            category_label,
        });
    }
    Ok(out)
}

/// Checks that every catalog label belongs to the taxonomy.
pub fn validate_catalog_labels(catalog: &[ItemRecord], taxonomy: &Taxonomy) -> Result<()> {
    for item in catalog {
        if let Some(label) = &item.category_label {
            if taxonomy.index_of(label).is_none() {
                return Err(Error::validation(
                    format!("catalog[{}].category_label", item.item_id),
                    format!("label `{label}` is not in the taxonomy"),
                ));
            }
        }
    }
    Ok(())
}

fn category_index(labels: &BTreeMap<String, String>, taxonomy: &Taxonomy, item: &str) -> usize {
    labels
        .get(item)
        .and_then(|c| taxonomy.index_of(c))
        .unwrap_or_else(|| taxonomy.unknown_index())
}

/// Normalizes `counts + smoothing`; all-zero input maps to uniform.
pub fn interest_from_counts(counts: &[f64], smoothing: f64) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c + smoothing).sum();
    if total <= 0.0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|c| (c + smoothing) / total).collect()
}

/// Per-user interest vectors over the full taxonomy (including `unknown`).
/// Every event counts; items without a label count toward `unknown`.
pub fn estimate_interest_distribution(
    events: &[InteractionEvent],
    labels: &BTreeMap<String, String>,
    taxonomy: &Taxonomy,
    smoothing: f64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::validation("smoothing", "must be a finite value >= 0"));
    }
    let mut counts: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in events {
        let c = category_index(labels, taxonomy, &e.item_id);
        counts
            .entry(e.user_id.as_str())
            .or_insert_with(|| vec![0.0; taxonomy.len()])[c] += 1.0;
    }
    Ok(counts
        .into_iter()
        .map(|(u, c)| (u.to_string(), interest_from_counts(&c, smoothing)))
        .collect())
}

pub fn compute_category_popularity(
    events: &[InteractionEvent],
    labels: &BTreeMap<String, String>,
    taxonomy: &Taxonomy,
) -> Result<Vec<f64>> {
    if events.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut counts = vec![0usize; taxonomy.len()];
    for e in events {
        counts[category_index(labels, taxonomy, &e.item_id)] += 1;
    }
    let n = events.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Sparse symmetric item × item counts of distinct co-engaging users, plus the
/// number of distinct users per item (the squared norm of its incidence
/// vector).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoEngagement {
    pub pairs: BTreeMap<String, BTreeMap<String, u32>>,
    pub item_users: BTreeMap<String, u32>,
}

impl CoEngagement {
    pub fn count(&self, a: &str, b: &str) -> u32 {
        self.pairs
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn build_co_engagement(events: &[InteractionEvent]) -> CoEngagement {
    let mut by_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        by_user
            .entry(e.user_id.as_str())
            .or_default()
            .insert(e.item_id.as_str());
    }
    let mut co = CoEngagement::default();
    for items in by_user.values() {
        let items: Vec<&str> = items.iter().copied().collect();
        for (x, a) in items.iter().enumerate() {
            *co.item_users.entry(a.to_string()).or_default() += 1;
            for b in &items[x + 1..] {
                *co.pairs
                    .entry(a.to_string())
                    .or_default()
                    .entry(b.to_string())
                    .or_default() += 1;
                *co.pairs
                    .entry(b.to_string())
                    .or_default()
                    .entry(a.to_string())
                    .or_default() += 1;
            }
        }
    }
    co
}

/// Mean events per time bin over the bins a user's activity spans (first to
/// last event inclusive, bins aligned to the epoch).
pub fn compute_activity_rate(
    events: &[InteractionEvent],
    bin_seconds: i64,
) -> Result<BTreeMap<String, f64>> {
    if bin_seconds <= 0 {
        return Err(Error::validation("bin_seconds", "must be > 0"));
    }
    let mut span: BTreeMap<&str, (i64, i64, usize)> = BTreeMap::new();
    for e in events {
        let bin = e.timestamp.div_euclid(bin_seconds);
        let s = span.entry(e.user_id.as_str()).or_insert((bin, bin, 0));
        s.0 = s.0.min(bin);
        s.1 = s.1.max(bin);
        s.2 += 1;
    }
    Ok(span
        .into_iter()
        .map(|(u, (lo, hi, n))| (u.to_string(), n as f64 / (hi - lo + 1) as f64))
        .collect())
}

/// Aggregate statistics of an ingested dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub taxonomy: Taxonomy,
    pub catalog: Vec<ItemRecord>,
    /// Absent when the log is empty.
    pub category_popularity: Option<Vec<f64>>,
    pub user_interest_estimates: BTreeMap<String, Vec<f64>>,
    pub co_engagement: CoEngagement,
    pub activity_rate: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct WorldModelOptions {
    pub smoothing: f64,
    pub bin_seconds: i64,
}

impl Default for WorldModelOptions {
    fn default() -> Self {
        WorldModelOptions {
            smoothing: DEFAULT_SMOOTHING,
            bin_seconds: DEFAULT_BIN_SECONDS,
        }
    }
}

pub fn build_world_model(
    events: &[InteractionEvent],
    catalog: Vec<ItemRecord>,
    labels: &BTreeMap<String, String>,
    taxonomy: &Taxonomy,
    opts: WorldModelOptions,
) -> Result<WorldModel> {
    let category_popularity = match compute_category_popularity(events, labels, taxonomy) {
        Ok(p) => Some(p),
        Err(Error::EmptyLog) => None,
        Err(e) => return Err(e),
    };
    Ok(WorldModel {
        taxonomy: taxonomy.clone(),
        catalog,
        category_popularity,
        user_interest_estimates: estimate_interest_distribution(
            events,
            labels,
            taxonomy,
            opts.smoothing,
        )?,
        co_engagement: build_co_engagement(events),
        activity_rate: compute_activity_rate(events, opts.bin_seconds)?,
    })
}
