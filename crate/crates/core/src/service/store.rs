//! Flat-file run store.
//!
//! ```text
//! root/
//!   datasets/<name>/{catalog.<csv|jsonl>, interactions.<csv|jsonl>, labels.csv, dataset.json}
//!   taxonomies/<name>/{taxonomy.txt, lexicon.csv}
//!   cohorts/<name>.json
//!   runs/<run_id>/{config.json, log.jsonl, report.json}
//!   index.json
//! ```
//!
//! Every file is written to a temporary name and renamed into place.
//! Uploaded directories are staged under a temporary name and renamed whole.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{load_lexicon, load_taxonomy, parse_external_labels, Taxonomy};
use crate::error::{Error, Result};
use crate::ingest::{load_catalog, load_interactions, ColumnMap, Format};
use crate::pipeline::{parse_json, read_text, write_atomic, RunConfigFile};
use crate::simulate::SimulationConfig;
use crate::synthgen::CohortSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Done | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    /// Unix milliseconds.
    pub submitted_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub dataset: String,
    pub taxonomy: String,
    pub config: SimulationConfig,
    pub error_message: Option<String>,
    /// Relative to the store root; present once the run is done.
    pub log: Option<String>,
    pub report: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    runs: Vec<RunRecord>,
}

/// Files uploaded as a dataset, as text.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetUpload {
    pub name: String,
    pub catalog: String,
    #[serde(default)]
    pub catalog_format: Option<Format>,
    #[serde(default)]
    pub interactions: Option<String>,
    #[serde(default)]
    pub interactions_format: Option<Format>,
    #[serde(default)]
    pub labels: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub items: usize,
    pub events: Option<usize>,
    pub labels: Option<usize>,
    pub catalog_format: Format,
    pub interactions_format: Option<Format>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyUpload {
    pub name: String,
    /// One category per line.
    pub taxonomy: String,
    /// Csv rows `category,term`.
    pub lexicon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyInfo {
    pub name: String,
    pub categories: Taxonomy,
    pub lexicon_terms: usize,
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Client-supplied names become directory names.
pub fn check_name(field: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("`{name}` must be 1-128 characters of [A-Za-z0-9._-], not starting with `.`"),
        ))
    }
}

fn ext(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    }
}

pub struct Store {
    root: PathBuf,
    index: Mutex<Index>,
    counter: AtomicU64,
}

impl Store {
    /// Opens (creating if needed) a store. Runs left queued or running by a
    /// previous process are marked failed, as are done runs whose artifacts
    /// are missing.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        for d in ["datasets", "taxonomies", "cohorts", "runs"] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let index_path = root.join("index.json");
        let mut index: Index = if index_path.exists() {
            parse_json(&read_text(&index_path)?, "index.")?
        } else {
            Index::default()
        };
        let now = now_millis();
        for r in &mut index.runs {
            let missing = r.status == RunStatus::Done
                && [&r.log, &r.report]
                    .iter()
                    .any(|p| p.as_ref().is_none_or(|p| !root.join(p).is_file()));
            let reason = match r.status {
                RunStatus::Queued | RunStatus::Running => "interrupted by a service restart",
                RunStatus::Done if missing => "artifacts missing after a service restart",
                _ => continue,
            };
            r.status = RunStatus::Failed;
            r.error_message = Some(reason.to_string());
            r.finished_at = Some(now);
            r.log = None;
            r.report = None;
        }
        let store = Store {
            root,
            index: Mutex::new(index),
            counter: AtomicU64::new(0),
        };
        store.save_index(&store.index.lock().expect("index lock"))?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn save_index(&self, index: &Index) -> Result<()> {
        let text = serde_json::to_string_pretty(index).expect("index serializes");
        write_atomic(&self.root.join("index.json"), text.as_bytes())
    }

    fn dataset_dir(&self, name: &str) -> PathBuf {
        self.root.join("datasets").join(name)
    }

    fn taxonomy_dir(&self, name: &str) -> PathBuf {
        self.root.join("taxonomies").join(name)
    }

    fn cohort_path(&self, name: &str) -> PathBuf {
        self.root.join("cohorts").join(format!("{name}.json"))
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    /// Writes `files` into a staging directory, checks them with
    /// `validate`, then renames the directory to `dest`.
    fn stage_dir<T>(
        &self,
        dest: &Path,
        kind: &'static str,
        name: &str,
        files: &[(String, &str)],
        validate: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let parent = dest.parent().expect("store subdirectory");
        if dest.exists() {
            return Err(Error::Duplicate { kind, id: name.to_string() });
        }
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        for (file, text) in files {
            let p = staging.path().join(file);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        let out = validate(staging.path())?;
        let staged = staging.keep();
        if let Err(e) = fs::rename(&staged, dest) {
            let _ = fs::remove_dir_all(&staged);
            return Err(if dest.exists() {
                Error::Duplicate { kind, id: name.to_string() }
            } else {
                Error::io(dest, e)
            });
        }
        Ok(out)
    }

    pub fn add_dataset(&self, up: &DatasetUpload) -> Result<DatasetInfo> {
        check_name("name", &up.name)?;
        let cat_fmt = up.catalog_format.unwrap_or(Format::Csv);
        let int_fmt = up.interactions.as_ref().map(|_| up.interactions_format.unwrap_or(Format::Csv));
        let mut files = vec![(format!("catalog.{}", ext(cat_fmt)), up.catalog.as_str())];
        if let (Some(text), Some(f)) = (&up.interactions, int_fmt) {
            files.push((format!("interactions.{}", ext(f)), text.as_str()));
        }
        if let Some(text) = &up.labels {
            files.push(("labels.csv".to_string(), text.as_str()));
        }
        let tag = |field: &'static str| move |e: Error| match e {
            Error::Parse { line, field: f, message, .. } => {
                Error::validation(field, format!("line {line}: field `{f}`: {message}"))
            }
            Error::Validation { .. } | Error::Duplicate { .. } | Error::Unknown { .. } => {
                Error::validation(field, e.to_string())
            }
            other => other,
        };
        let name = up.name.clone();
        let info = self.stage_dir(&self.dataset_dir(&up.name), "dataset", &up.name, &files, |dir| {
            let items = load_catalog(&dir.join(&files[0].0), cat_fmt).map_err(tag("catalog"))?;
            let events = match int_fmt {
                Some(f) => Some(
                    load_interactions(&dir.join(format!("interactions.{}", ext(f))), f, &ColumnMap::new())
                        .map_err(tag("interactions"))?
                        .len(),
                ),
                None => None,
            };
            let labels = match &up.labels {
                Some(t) => Some(parse_external_labels(t).map_err(tag("labels"))?.len()),
                None => None,
            };
            let info = DatasetInfo {
                name,
                items: items.len(),
                events,
                labels,
                catalog_format: cat_fmt,
                interactions_format: int_fmt,
            };
            let meta = serde_json::to_string_pretty(&info).expect("dataset info serializes");
            fs::write(dir.join("dataset.json"), meta).map_err(|e| Error::io(dir, e))?;
            Ok(info)
        })?;
        Ok(info)
    }

    pub fn dataset(&self, name: &str) -> Result<DatasetInfo> {
        check_name("dataset", name).map_err(|_| Error::unknown("dataset", name))?;
        let p = self.dataset_dir(name).join("dataset.json");
        if !p.is_file() {
            return Err(Error::unknown("dataset", name));
        }
        parse_json(&read_text(&p)?, "dataset.")
    }

    pub fn add_taxonomy(&self, up: &TaxonomyUpload) -> Result<TaxonomyInfo> {
        check_name("name", &up.name)?;
        let files = [
            ("taxonomy.txt".to_string(), up.taxonomy.as_str()),
            ("lexicon.csv".to_string(), up.lexicon.as_str()),
        ];
        let tag = |field: &'static str| move |e: Error| match e {
            Error::Io { .. } => e,
            other => Error::validation(field, other.to_string()),
        };
        self.stage_dir(&self.taxonomy_dir(&up.name), "taxonomy", &up.name, &files, |dir| {
            let taxonomy = load_taxonomy(&dir.join("taxonomy.txt")).map_err(tag("taxonomy"))?;
            let lexicon = load_lexicon(&dir.join("lexicon.csv"), &taxonomy).map_err(tag("lexicon"))?;
            let lexicon_terms = taxonomy.categories().iter().map(|c| lexicon.terms(c).count()).sum();
            Ok(TaxonomyInfo { name: up.name.clone(), categories: taxonomy, lexicon_terms })
        })
    }

    pub fn taxonomy(&self, name: &str) -> Result<TaxonomyInfo> {
        check_name("taxonomy", name).map_err(|_| Error::unknown("taxonomy", name))?;
        let dir = self.taxonomy_dir(name);
        if !dir.is_dir() {
            return Err(Error::unknown("taxonomy", name));
        }
        let taxonomy = load_taxonomy(&dir.join("taxonomy.txt"))?;
        let lexicon = load_lexicon(&dir.join("lexicon.csv"), &taxonomy)?;
        let lexicon_terms = taxonomy.categories().iter().map(|c| lexicon.terms(c).count()).sum();
        Ok(TaxonomyInfo { name: name.to_string(), categories: taxonomy, lexicon_terms })
    }

    fn list_dir(&self, sub: &str, suffix: &str) -> Result<Vec<String>> {
        let dir = self.root.join(sub);
        let mut out: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.starts_with('.'))
            .filter_map(|n| n.strip_suffix(suffix).map(str::to_string))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn datasets(&self) -> Result<Vec<String>> {
        self.list_dir("datasets", "")
    }

    pub fn taxonomies(&self) -> Result<Vec<String>> {
        self.list_dir("taxonomies", "")
    }

    pub fn cohorts(&self) -> Result<Vec<String>> {
        self.list_dir("cohorts", ".json")
    }

    /// Stores cohort specs atomically as a group: either all are created or
    /// none (a name clash with any of them fails the whole group).
    pub fn add_cohorts(&self, specs: &[CohortSpec]) -> Result<()> {
        let _guard = self.index.lock().expect("index lock");
        for s in specs {
            check_name("name", &s.name)?;
            s.validate_shape("")?;
            if self.cohort_path(&s.name).exists() {
                return Err(Error::Duplicate { kind: "cohort", id: s.name.clone() });
            }
        }
        for s in specs {
            let text = serde_json::to_string_pretty(s).expect("cohort serializes") + "\n";
            write_atomic(&self.cohort_path(&s.name), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn cohort(&self, name: &str) -> Result<CohortSpec> {
        check_name("cohort", name).map_err(|_| Error::unknown("cohort", name))?;
        let p = self.cohort_path(name);
        if !p.is_file() {
            return Err(Error::unknown("cohort", name));
        }
        parse_json(&read_text(&p)?, "cohort.")
    }

    /// Builds the run config pointing at stored inputs.
    pub fn resolve_run(
        &self,
        dataset: &str,
        taxonomy: &str,
        simulation: SimulationConfig,
        report: crate::riskeval::ReportOptions,
    ) -> Result<RunConfigFile> {
        let ds = self.dataset(dataset).map_err(|_| {
            Error::validation("dataset", format!("unknown dataset `{dataset}`"))
        })?;
        self.taxonomy(taxonomy).map_err(|_| {
            Error::validation("taxonomy", format!("unknown taxonomy `{taxonomy}`"))
        })?;
        let dd = self.dataset_dir(dataset);
        let td = self.taxonomy_dir(taxonomy);
        Ok(RunConfigFile {
            classification: None,
            catalog: Some(dd.join(format!("catalog.{}", ext(ds.catalog_format)))),
            catalog_format: Some(ds.catalog_format),
            taxonomy: Some(td.join("taxonomy.txt")),
            lexicon: Some(td.join("lexicon.csv")),
            labels: ds.labels.map(|_| dd.join("labels.csv")),
            interactions: ds.interactions_format.map(|f| dd.join(format!("interactions.{}", ext(f)))),
            interactions_format: ds.interactions_format,
            world_model: None,
            users: None,
            simulation,
            report,
        })
    }

    pub fn new_run_id(&self, config: &RunConfigFile) -> String {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut h = Sha256::new();
        h.update(config.to_json().as_bytes());
        h.update(config.simulation.seed.to_le_bytes());
        h.update(nanos.to_le_bytes());
        h.update(n.to_le_bytes());
        h.update(std::process::id().to_le_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the run's config and registers it as queued.
    pub fn create_run(&self, dataset: &str, taxonomy: &str, config: &RunConfigFile) -> Result<RunRecord> {
        let mut index = self.index.lock().expect("index lock");
        let mut run_id = self.new_run_id(config);
        while index.runs.iter().any(|r| r.run_id == run_id) || self.run_dir(&run_id).exists() {
            run_id = self.new_run_id(config);
        }
        let dir = self.run_dir(&run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(&dir.join("config.json"), config.to_json().as_bytes())?;
        let record = RunRecord {
            run_id,
            status: RunStatus::Queued,
            submitted_at: now_millis(),
            started_at: None,
            finished_at: None,
            dataset: dataset.to_string(),
            taxonomy: taxonomy.to_string(),
            config: config.simulation.clone(),
            error_message: None,
            log: None,
            report: None,
        };
        index.runs.push(record.clone());
        self.save_index(&index)?;
        Ok(record)
    }

    pub fn run(&self, run_id: &str) -> Result<RunRecord> {
        let index = self.index.lock().expect("index lock");
        index
            .runs
            .iter()
            .find(|r| r.run_id == run_id)
            .cloned()
            .ok_or_else(|| Error::unknown("run", run_id))
    }

    pub fn runs(&self) -> Vec<RunRecord> {
        self.index.lock().expect("index lock").runs.clone()
    }

    /// Moves a queued run to running. Returns `None` if the run was deleted
    /// or is no longer queued.
    pub fn start_run(&self, run_id: &str) -> Result<Option<RunConfigFile>> {
        let mut index = self.index.lock().expect("index lock");
        let Some(r) = index.runs.iter_mut().find(|r| r.run_id == run_id) else {
            return Ok(None);
        };
        if r.status != RunStatus::Queued {
            return Ok(None);
        }
        r.status = RunStatus::Running;
        r.started_at = Some(now_millis());
        self.save_index(&index)?;
        drop(index);
        let p = self.run_dir(run_id).join("config.json");
        Ok(Some(parse_json(&read_text(&p)?, "config.")?))
    }

    /// Writes the artifacts, then marks the run done.
    pub fn finish_run(&self, run_id: &str, log: &[u8], report: &str) -> Result<()> {
        let dir = self.run_dir(run_id);
        write_atomic(&dir.join("log.jsonl"), log)?;
        write_atomic(&dir.join("report.json"), report.as_bytes())?;
        self.set_terminal(run_id, RunStatus::Done, None)
    }

    pub fn fail_run(&self, run_id: &str, message: String) -> Result<()> {
        self.set_terminal(run_id, RunStatus::Failed, Some(message))
    }

    fn set_terminal(&self, run_id: &str, status: RunStatus, message: Option<String>) -> Result<()> {
        let mut index = self.index.lock().expect("index lock");
        let Some(r) = index.runs.iter_mut().find(|r| r.run_id == run_id) else {
            return Ok(());
        };
        r.status = status;
        r.finished_at = Some(now_millis());
        r.error_message = message;
        if status == RunStatus::Done {
            r.log = Some(format!("runs/{run_id}/log.jsonl"));
            r.report = Some(format!("runs/{run_id}/report.json"));
        }
        self.save_index(&index)
    }

    /// Removes a run that is not currently executing.
    pub fn delete_run(&self, run_id: &str) -> Result<()> {
        let mut index = self.index.lock().expect("index lock");
        let pos = index
            .runs
            .iter()
            .position(|r| r.run_id == run_id)
            .ok_or_else(|| Error::unknown("run", run_id))?;
        if index.runs[pos].status == RunStatus::Running {
            return Err(Error::Conflict(format!("run `{run_id}` is running and cannot be deleted")));
        }
        index.runs.remove(pos);
        self.save_index(&index)?;
        let dir = self.run_dir(run_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn read_artifact(&self, run_id: &str, file: &str) -> Result<Vec<u8>> {
        let p = self.run_dir(run_id).join(file);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    }
}
