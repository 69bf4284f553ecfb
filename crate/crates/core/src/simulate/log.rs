//! The exposure log: one header line, then one json object per
//! (step, active user).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "recaudit-exposure-log/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub name: String,
    pub size: usize,
    /// Mean interest of the cohort's users before step 1. `None` for empty
    /// cohorts.
    pub initial_interest_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub k: usize,
    pub taxonomy: Vec<String>,
    pub cohorts: Vec<CohortSummary>,
    /// Every catalog item, sorted by id.
    pub items: Vec<String>,
}

impl LogHeader {
    pub fn cohort(&self, name: &str) -> Option<&CohortSummary> {
        self.cohorts.iter().find(|c| c.name == name)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.taxonomy.iter().position(|c| c == name)
    }

    pub fn population(&self) -> usize {
        self.cohorts.iter().map(|c| c.size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlateEntry {
    pub item: String,
    pub cat: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chosen {
    pub item: String,
    /// 1-based slate position.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    pub user: String,
    pub cohort: String,
    pub slate: Vec<SlateEntry>,
    pub chosen: Option<Chosen>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureLog {
    pub header: LogHeader,
    pub records: Vec<Record>,
}

impl ExposureLog {
    /// Checks the structural invariants: steps in `1..=T` and nondecreasing,
    /// one record per user and step, chosen items present at their rank,
    /// categories and cohorts declared in the header.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let mut last_t = 0;
        let mut seen = std::collections::HashSet::new();
        for (n, r) in self.records.iter().enumerate() {
            let at = |f: &str| format!("records[{n}].{f}");
            if r.t < 1 || r.t > h.steps || r.t < last_t {
                return Err(Error::validation(at("t"), format!("step {} out of order or range", r.t)));
            }
            if r.t != last_t {
                seen.clear();
                last_t = r.t;
            }
            if !seen.insert(r.user.as_str()) {
                return Err(Error::validation(at("user"), format!("`{}` appears twice in step {}", r.user, r.t)));
            }
            if h.cohort(&r.cohort).is_none() {
                return Err(Error::validation(at("cohort"), format!("undeclared cohort `{}`", r.cohort)));
            }
            for e in &r.slate {
                if h.category_index(&e.cat).is_none() {
                    return Err(Error::validation(at("slate"), format!("undeclared category `{}`", e.cat)));
                }
            }
            if let Some(c) = &r.chosen {
                let ok = c.rank >= 1 && r.slate.get(c.rank - 1).is_some_and(|e| e.item == c.item);
                if !ok {
                    return Err(Error::validation(at("chosen"), format!("`{}` is not at rank {}", c.item, c.rank)));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Runtime(format!("writing exposure log: {e}"));
        serde_json::to_writer(&mut w, &self.header).map_err(|e| Error::Runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Runtime(e.to_string()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R, origin: &Path) -> Result<ExposureLog> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            field: if line == 1 { "header".into() } else { "record".into() },
            message,
        };
        let mut lines = r.lines().enumerate();
        let header: LogHeader = loop {
            match lines.next() {
                None => return Err(perr(1, "missing header line".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io(origin, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| perr(i + 1, e.to_string()))?;
                }
            }
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| perr(i + 1, e.to_string()))?);
        }
        let log = ExposureLog { header, records };
        log.validate()?;
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<ExposureLog> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ExposureLog::read_jsonl(BufReader::new(f), path)
    }

    pub fn from_jsonl_bytes(bytes: &[u8]) -> Result<ExposureLog> {
        ExposureLog::read_jsonl(bytes, Path::new("<memory>"))
    }
}
