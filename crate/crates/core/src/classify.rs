//! Content taxonomy and the explainable lexicon classifier.
//!
//! Every catalog item receives exactly one category. Labels supplied by an
//! external classifier always win; otherwise the title is matched against a
//! per-category term list and the matched terms are kept as evidence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ItemRecord;

pub const UNKNOWN: &str = "unknown";

/// Ordered category vocabulary. The reserved `unknown` category is always
/// present as the last entry and may not be declared by the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Taxonomy {
    categories: Vec<String>,
}

impl Taxonomy {
    pub fn new<I, S>(user_categories: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut categories = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, name) in user_categories.into_iter().enumerate() {
            let name: String = name.into();
            let field = format!("categories[{i}]");
            if name.is_empty() {
                return Err(Error::validation(field, "category name is empty"));
            }
            if name != name.to_lowercase() || name.chars().any(char::is_whitespace) {
                return Err(Error::validation(
                    field,
                    format!("category `{name}` must be lowercase without whitespace"),
                ));
            }
            if name == UNKNOWN {
                return Err(Error::validation(
                    field,
                    "`unknown` is reserved and may not be declared",
                ));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Duplicate {
                    kind: "category",
                    id: name,
                });
            }
            categories.push(name);
        }
        if categories.is_empty() {
            return Err(Error::validation(
                "categories",
                "taxonomy needs at least one category",
            ));
        }
        categories.push(UNKNOWN.to_string());
        Ok(Taxonomy { categories })
    }

    /// All categories including the trailing `unknown`.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn user_categories(&self) -> &[String] {
        &self.categories[..self.categories.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unknown_index(&self) -> usize {
        self.categories.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::unknown("category", name))
    }
}

impl TryFrom<Vec<String>> for Taxonomy {
    type Error = Error;

    /// Accepts the serialized form, which includes the trailing `unknown`.
    fn try_from(mut v: Vec<String>) -> Result<Self> {
        if v.last().map(String::as_str) == Some(UNKNOWN) {
            v.pop();
        }
        Taxonomy::new(v)
    }
}

impl From<Taxonomy> for Vec<String> {
    fn from(t: Taxonomy) -> Self {
        t.categories
    }
}

/// Reads a taxonomy file: one lowercase category per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_taxonomy(&text)
}

pub fn parse_taxonomy(text: &str) -> Result<Taxonomy> {
    Taxonomy::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
}

/// Category → term set. A term may be listed under several categories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    terms: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn insert(&mut self, taxonomy: &Taxonomy, category: &str, term: &str) -> Result<()> {
        let idx = taxonomy.require(category)?;
        if idx == taxonomy.unknown_index() {
            return Err(Error::validation(
                "category",
                "terms may not be attached to `unknown`",
            ));
        }
        if term.is_empty() || term.chars().any(char::is_whitespace) {
            return Err(Error::validation(
                "term",
                format!("term `{term}` must be nonempty and contain no whitespace"),
            ));
        }
        self.terms
            .entry(category.to_string())
            .or_default()
            .insert(term.to_lowercase());
        Ok(())
    }

    pub fn terms(&self, category: &str) -> impl Iterator<Item = &str> {
        self.terms
            .get(category)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    /// Term → categories (as taxonomy indices, ascending).
    fn index(&self, taxonomy: &Taxonomy) -> HashMap<&str, Vec<usize>> {
        let mut out: HashMap<&str, Vec<usize>> = HashMap::new();
        for (cat, terms) in &self.terms {
            let Some(ci) = taxonomy.index_of(cat) else {
                continue;
            };
            for t in terms {
                out.entry(t.as_str()).or_default().push(ci);
            }
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }
}

/// Reads a lexicon csv with rows `category,term`. A header row
/// `category,term` is optional.
pub fn load_lexicon(path: &Path, taxonomy: &Taxonomy) -> Result<Lexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text, taxonomy).map_err(|e| with_path(e, path))
}

pub fn parse_lexicon(text: &str, taxonomy: &Taxonomy) -> Result<Lexicon> {
    let mut lex = Lexicon::default();
    for (line, row) in csv_rows(text)? {
        if line == 1 && row.len() == 2 && row[0] == "category" && row[1] == "term" {
            continue;
        }
        if row.len() != 2 {
            return Err(parse_err(line, "term", "expected `category,term`"));
        }
        let (cat, term) = (row[0].trim(), row[1].trim());
        if taxonomy.index_of(cat).is_none() {
            return Err(Error::unknown("category", cat));
        }
        lex.insert(taxonomy, cat, term)
            .map_err(|e| parse_err(line, "term", &e.to_string()))?;
    }
    Ok(lex)
}

/// Reads external labels: csv rows `item_id,category` with optional header.
/// Categories are checked against the taxonomy by [`classify_catalog`].
pub fn load_external_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_external_labels(&text).map_err(|e| with_path(e, path))
}

pub fn parse_external_labels(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line, row) in csv_rows(text)? {
        if line == 1 && row.len() == 2 && row[0] == "item_id" && row[1] == "category" {
            continue;
        }
        if row.len() != 2 {
            return Err(parse_err(line, "category", "expected `item_id,category`"));
        }
        let item = row[0].trim().to_string();
        if item.is_empty() {
            return Err(parse_err(line, "item_id", "empty item_id"));
        }
        if out.insert(item.clone(), row[1].trim().to_string()).is_some() {
            return Err(Error::Duplicate {
                kind: "label for item",
                id: item,
            });
        }
    }
    Ok(out)
}

fn csv_rows(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, "row", &e.to_string()))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        out.push((i + 1, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse_err(line: usize, field: &str, message: &str) -> Error {
    Error::Parse {
        path: Default::default(),
        line,
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn with_path(e: Error, p: &Path) -> Error {
    match e {
        Error::Parse {
            line,
            field,
            message,
            ..
        } => Error::Parse {
            path: p.to_path_buf(),
            line,
            field,
            message,
        },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ExternalLabel,
    Lexicon,
    FallbackUnknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub item_id: String,
    pub category: String,
    pub confidence: f64,
    pub evidence: Vec<String>,
    pub source: Source,
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(title: &str) -> Vec<String> {
    title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Scores each category by the number of title tokens (occurrences, not
/// distinct terms) found in its lexicon. Ties go to the category listed
/// first in the taxonomy. Confidence is the winning score over the number
/// of tokens that matched any category.
pub fn classify_item(item: &ItemRecord, lexicon: &Lexicon, taxonomy: &Taxonomy) -> ClassificationResult {
    classify_with_index(item, &lexicon.index(taxonomy), taxonomy)
}

fn classify_with_index(
    item: &ItemRecord,
    index: &HashMap<&str, Vec<usize>>,
    taxonomy: &Taxonomy,
) -> ClassificationResult {
    let tokens = tokenize(&item.title);
    let mut scores = vec![0usize; taxonomy.len()];
    let mut matched = 0usize;
    for tok in &tokens {
        if let Some(cats) = index.get(tok.as_str()) {
            matched += 1;
            for &c in cats {
                scores[c] += 1;
            }
        }
    }
    if matched == 0 {
        return ClassificationResult {
            item_id: item.item_id.clone(),
            category: UNKNOWN.to_string(),
            confidence: 0.0,
            evidence: Vec::new(),
            source: Source::FallbackUnknown,
        };
    }
    // first maximum in taxonomy order
    let (best, &top) = scores
        .iter()
        .enumerate()
        .fold((0, &0usize), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
    let evidence = tokens
        .iter()
        .filter(|t| index.get(t.as_str()).is_some_and(|c| c.contains(&best)))
        .cloned()
        .collect();
    ClassificationResult {
        item_id: item.item_id.clone(),
        category: taxonomy.categories()[best].clone(),
        confidence: top as f64 / matched as f64,
        evidence,
        source: Source::Lexicon,
    }
}

/// Classifies every catalog item. External labels take precedence over the
/// lexicon.
pub fn classify_catalog(
    items: &[ItemRecord],
    lexicon: &Lexicon,
    taxonomy: &Taxonomy,
    external: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, ClassificationResult>> {
    for (item, label) in external {
        if taxonomy.index_of(label).is_none() {
            return Err(Error::validation(
                format!("labels[{item}]"),
                format!("label `{label}` of item `{item}` is not in the taxonomy"),
            ));
        }
    }
    let index = lexicon.index(taxonomy);
    let results: Vec<ClassificationResult> = items
        .par_iter()
        .map(|item| match external.get(&item.item_id) {
            Some(label) => ClassificationResult {
                item_id: item.item_id.clone(),
                category: label.clone(),
                confidence: 1.0,
                evidence: Vec::new(),
                source: Source::ExternalLabel,
            },
            None => classify_with_index(item, &index, taxonomy),
        })
        .collect();
    let mut out = BTreeMap::new();
    for r in results {
        if out.contains_key(&r.item_id) {
            return Err(Error::Duplicate {
                kind: "item_id",
                id: r.item_id,
            });
        }
        out.insert(r.item_id.clone(), r);
    }
    Ok(out)
}

/// Serialized output of the `classify` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationFile {
    pub taxonomy: Taxonomy,
    pub results: Vec<ClassificationResult>,
}

impl ClassificationFile {
    pub fn new(taxonomy: Taxonomy, results: BTreeMap<String, ClassificationResult>) -> Self {
        ClassificationFile {
            taxonomy,
            results: results.into_values().collect(),
        }
    }

    pub fn labels(&self) -> BTreeMap<String, String> {
        self.results
            .iter()
            .map(|r| (r.item_id.clone(), r.category.clone()))
            .collect()
    }

    pub fn catalog(&self) -> Result<ClassifiedCatalog> {
        ClassifiedCatalog::new(
            self.taxonomy.clone(),
            self.results
                .iter()
                .map(|r| (r.item_id.clone(), r.category.clone())),
        )
    }
}

/// Item ids with their category index, sorted by item id. The position of an
/// item in this list is its dense index everywhere downstream, so ordering by
/// index is ordering by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedCatalog {
    taxonomy: Taxonomy,
    items: Vec<String>,
    categories: Vec<usize>,
    by_category: Vec<Vec<usize>>,
}

impl ClassifiedCatalog {
    pub fn new<I>(taxonomy: Taxonomy, labelled: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut pairs: Vec<(String, usize)> = Vec::new();
        for (item, cat) in labelled {
            let ci = taxonomy.require(&cat)?;
            pairs.push((item, ci));
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Duplicate {
                    kind: "item_id",
                    id: w[0].0.clone(),
                });
            }
        }
        let mut by_category = vec![Vec::new(); taxonomy.len()];
        for (i, (_, c)) in pairs.iter().enumerate() {
            by_category[*c].push(i);
        }
        let (items, categories) = pairs.into_iter().unzip();
        Ok(ClassifiedCatalog {
            taxonomy,
            items,
            categories,
            by_category,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    pub fn item_id(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn category_of(&self, idx: usize) -> usize {
        self.categories[idx]
    }

    pub fn category_name(&self, idx: usize) -> &str {
        &self.taxonomy.categories()[self.categories[idx]]
    }

    pub fn items_in(&self, category: usize) -> &[usize] {
        &self.by_category[category]
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.items
            .binary_search_by(|p| p.as_str().cmp(item_id))
            .ok()
    }
}
