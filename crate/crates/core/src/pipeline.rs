//! File-level stages shared by the command line and the service: each reads
//! artifacts from disk and returns the next artifact, so the two front ends
//! produce byte-identical output for the same inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{
    classify_catalog, load_external_labels, load_lexicon, load_taxonomy, ClassificationFile,
    ClassifiedCatalog, Taxonomy,
};
use crate::error::{Error, Result};
use crate::ingest::{
    build_co_engagement, build_world_model, load_catalog, load_interactions, validate_catalog_labels,
    CoEngagement, ColumnMap, Format, WorldModel, WorldModelOptions,
};
use crate::riskeval::{build_report, ReportOptions, RiskReport};
use crate::simulate::{ExposureLog, Simulation, SimulationConfig};
use crate::synthgen::{generate_cohort, CohortSpec, SyntheticUser};

/// One run, end to end: where the inputs live, how to simulate, and how to
/// report. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Output of the `classify` stage. Replaces `catalog`/`lexicon`/`labels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Interaction log whose co-engagement seeds item-kNN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions_format: Option<Format>,
    /// Output of `ingest`; an alternative source of co-engagement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_model: Option<PathBuf>,
    /// Output of `cohort gen`; used instead of generating the cohorts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<PathBuf>,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, prefix: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = match (prefix.is_empty(), path.as_str()) {
            (true, _) => path.clone(),
            (false, ".") => prefix.trim_end_matches('.').to_string(),
            (false, _) => format!("{prefix}{path}"),
        };
        Error::validation(field, e.into_inner().to_string())
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

impl RunConfigFile {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfigFile = parse_json(text, "")?;
        cfg.resolve_paths(base_dir);
        cfg.validate_shape()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&read_text(path)?, base)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.classification,
            &mut self.catalog,
            &mut self.taxonomy,
            &mut self.lexicon,
            &mut self.labels,
            &mut self.interactions,
            &mut self.world_model,
            &mut self.users,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks the document without touching the referenced files.
    pub fn validate_shape(&self) -> Result<()> {
        if self.classification.is_none() {
            for (name, v) in [("catalog", &self.catalog), ("taxonomy", &self.taxonomy), ("lexicon", &self.lexicon)] {
                if v.is_none() {
                    return Err(Error::validation(
                        name,
                        "required unless `classification` is given",
                    ));
                }
            }
        }
        if self.interactions.is_some() && self.world_model.is_some() {
            return Err(Error::validation(
                "world_model",
                "give either `interactions` or `world_model`, not both",
            ));
        }
        self.simulation.validate_shape("simulation.")?;
        if let Some(w) = self.report.window {
            if w == 0 {
                return Err(Error::validation("report.window", "must be >= 1"));
            }
        }
        if let Some(e) = self.report.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::validation("report.epsilon", "must be a finite number > 0"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Loads and checks every referenced input.
    pub fn load_inputs(&self) -> Result<RunInputs> {
        let classification = match &self.classification {
            Some(p) => ClassificationFile::load(p)?,
            None => classify_files(
                self.catalog.as_deref().expect("checked by validate_shape"),
                self.catalog_format,
                self.taxonomy.as_deref().expect("checked by validate_shape"),
                self.lexicon.as_deref().expect("checked by validate_shape"),
                self.labels.as_deref(),
            )?,
        };
        let catalog = classification.catalog()?;
        if let Some(t) = &self.taxonomy {
            if self.classification.is_some() && load_taxonomy(t)? != *catalog.taxonomy() {
                return Err(Error::validation(
                    "taxonomy",
                    "differs from the classification file's taxonomy",
                ));
            }
        }
        let co_engagement = match (&self.interactions, &self.world_model) {
            (Some(p), _) => {
                let fmt = self.interactions_format.unwrap_or_else(|| Format::from_path(p));
                Some(build_co_engagement(&load_interactions(p, fmt, &ColumnMap::new())?))
            }
            (None, Some(p)) => {
                let wm: WorldModel = parse_json(&read_text(p)?, "world_model.")?;
                if wm.taxonomy != *catalog.taxonomy() {
                    return Err(Error::validation("world_model.taxonomy", "differs from the run taxonomy"));
                }
                Some(wm.co_engagement)
            }
            (None, None) => None,
        };
        let users = match &self.users {
            Some(p) => Some(UsersFile::load(p)?.users),
            None => None,
        };
        self.simulation.validate(&catalog, "simulation.")?;
        Ok(RunInputs { catalog, co_engagement, users })
    }
}

/// Resolved, in-memory inputs of a run.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub catalog: ClassifiedCatalog,
    pub co_engagement: Option<CoEngagement>,
    pub users: Option<Vec<SyntheticUser>>,
}

impl RunInputs {
    pub fn simulate(&self, config: &SimulationConfig) -> Result<ExposureLog> {
        let mut sim = Simulation::new(config, &self.catalog).co_engagement(self.co_engagement.as_ref());
        if let Some(users) = &self.users {
            sim = sim.users(users.clone());
        }
        sim.run()
    }
}

/// Serialized outputs of a run: the jsonl log and the json report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub log: Vec<u8>,
    pub report: String,
}

/// `simulate` then `evaluate`, returning the exact bytes either front end
/// writes.
pub fn execute_run(config: &RunConfigFile) -> Result<RunArtifacts> {
    let inputs = config.load_inputs()?;
    let log = inputs.simulate(&config.simulation)?;
    let report = build_report(&log, &config.report)?;
    Ok(RunArtifacts {
        log: log.to_jsonl(),
        report: report.to_json(),
    })
}

/// The `evaluate` stage on serialized input.
pub fn evaluate_log_bytes(log: &[u8], options: &ReportOptions) -> Result<RiskReport> {
    build_report(&ExposureLog::from_jsonl_bytes(log)?, options)
}

/// The `classify` stage: catalog + taxonomy + lexicon [+ labels]. Labels
/// carried in the catalog are used as external labels; a labels file
/// overrides them.
pub fn classify_files(
    catalog: &Path,
    catalog_format: Option<Format>,
    taxonomy: &Path,
    lexicon: &Path,
    labels: Option<&Path>,
) -> Result<ClassificationFile> {
    let taxonomy = load_taxonomy(taxonomy)?;
    let lexicon = load_lexicon(lexicon, &taxonomy)?;
    let items = load_catalog(catalog, catalog_format.unwrap_or_else(|| Format::from_path(catalog)))?;
    validate_catalog_labels(&items, &taxonomy)?;
    let mut external: BTreeMap<String, String> = items
        .iter()
        .filter_map(|i| Some((i.item_id.clone(), i.category_label.clone()?)))
        .collect();
    if let Some(p) = labels {
        external.extend(load_external_labels(p)?);
    }
    let results = classify_catalog(&items, &lexicon, &taxonomy, &external)?;
    Ok(ClassificationFile::new(taxonomy, results))
}

impl ClassificationFile {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(&read_text(path)?, "classification.")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("classification serializes") + "\n"
    }
}

/// The `ingest` stage: interactions + catalog + taxonomy [+ labels] into a
/// world model. Item labels come from a labels file, then the catalog's own
/// labels; anything else is `unknown`.
pub fn ingest_files(
    interactions: &Path,
    interactions_format: Option<Format>,
    column_map: &ColumnMap,
    catalog: &Path,
    catalog_format: Option<Format>,
    taxonomy: &Path,
    labels: Option<&Path>,
    options: WorldModelOptions,
) -> Result<WorldModel> {
    let taxonomy = load_taxonomy(taxonomy)?;
    let items = load_catalog(catalog, catalog_format.unwrap_or_else(|| Format::from_path(catalog)))?;
    validate_catalog_labels(&items, &taxonomy)?;
    let events = load_interactions(
        interactions,
        interactions_format.unwrap_or_else(|| Format::from_path(interactions)),
        column_map,
    )?;
    let mut label_map: BTreeMap<String, String> = items
        .iter()
        .filter_map(|i| Some((i.item_id.clone(), i.category_label.clone()?)))
        .collect();
    if let Some(p) = labels {
        label_map.extend(load_external_labels(p)?);
    }
    for (item, cat) in &label_map {
        if taxonomy.index_of(cat).is_none() {
            return Err(Error::validation(
                format!("labels[{item}]"),
                format!("label `{cat}` is not in the taxonomy"),
            ));
        }
    }
    build_world_model(&events, items, &label_map, &taxonomy, options)
}

/// Output of `cohort gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersFile {
    pub seed: u64,
    pub taxonomy: Taxonomy,
    pub cohorts: Vec<CohortSpec>,
    pub users: Vec<SyntheticUser>,
}

impl UsersFile {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(&read_text(path)?, "users.")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("users serialize") + "\n"
    }
}

/// The `cohort gen` stage.
pub fn generate_users(
    specs: &[CohortSpec],
    catalog: &ClassifiedCatalog,
    seed: u64,
) -> Result<UsersFile> {
    let mut users = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        spec.validate(catalog.taxonomy(), &format!("cohorts[{i}]."))?;
        users.extend(generate_cohort(spec, catalog, seed)?);
    }
    Ok(UsersFile {
        seed,
        taxonomy: catalog.taxonomy().clone(),
        cohorts: specs.to_vec(),
        users,
    })
}

/// Reads one cohort spec or a list of them.
pub fn parse_cohort_specs(text: &str) -> Result<Vec<CohortSpec>> {
    let value: serde_json::Value = parse_json(text, "")?;
    let specs = if value.is_array() {
        parse_json::<Vec<CohortSpec>>(text, "")?
    } else {
        vec![parse_json::<CohortSpec>(text, "")?]
    };
    for (i, s) in specs.iter().enumerate() {
        s.validate_shape(&format!("cohorts[{i}]."))?;
    }
    Ok(specs)
}
