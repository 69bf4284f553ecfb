//! Recommendation algorithms under audit.
//!
//! All algorithms share one contract: they are initialized from seed
//! histories, asked for top-k slates over the items a user has not consumed
//! yet, and updated once per step with that step's chosen items. New
//! algorithms plug in through [`Recommender`] and [`Model::Custom`].

mod item_knn;
mod mf;
mod popularity;
mod random;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifiedCatalog;
use crate::error::{Error, Result};
use crate::ingest::CoEngagement;
use crate::rng::{self, Key, StreamRng};
use crate::synthgen::SyntheticUser;

pub use item_knn::{cosine, ItemKnn};
pub use mf::{mf_gradient, mf_loss, mf_sgd_step, MatrixFactorization};
pub use popularity::Popularity;
pub use random::RandomRec;

/// Ordered item ids shown to one user in one step.
pub type Slate = Vec<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Random,
    Popularity,
    ItemKnn,
    MatrixFactorization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct RecommenderConfig {
    pub algorithm: Algorithm,
    pub k_neighbors: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub negative_ratio: usize,
    pub epochs_init: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            algorithm: Algorithm::Popularity,
            k_neighbors: 20,
            latent_dim: 16,
            learning_rate: 0.05,
            regularization: 0.01,
            negative_ratio: 4,
            epochs_init: 5,
        }
    }
}

impl RecommenderConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        RecommenderConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self, at: &str) -> Result<()> {
        match self.algorithm {
            Algorithm::ItemKnn if self.k_neighbors == 0 => Err(Error::validation(
                format!("{at}k_neighbors"),
                "must be > 0",
            )),
            Algorithm::MatrixFactorization => {
                if self.latent_dim == 0 {
                    return Err(Error::validation(format!("{at}latent_dim"), "must be > 0"));
                }
                if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                    return Err(Error::validation(format!("{at}learning_rate"), "must be > 0"));
                }
                if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
                    return Err(Error::validation(format!("{at}regularization"), "must be >= 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Seed data handed to a model at initialization. Users and items are dense
/// indices; item index order is item id order.
pub struct InitData<'a> {
    pub n_items: usize,
    pub n_users: usize,
    /// Seed histories in order, duplicates kept.
    pub histories: &'a [Vec<usize>],
    /// Distinct consumed items per user.
    pub consumed: &'a [BTreeSet<usize>],
    /// Ingested co-engagement mapped onto catalog indices:
    /// (symmetric pair counts, per-item distinct user counts).
    pub external: Option<(Vec<HashMap<usize, u32>>, Vec<u32>)>,
    pub seed: u64,
}

pub trait Recommender: Send + Sync {
    /// Returns at most `k` of `eligible` (ascending item indices), best first.
    fn rank(
        &self,
        user: usize,
        consumed: &BTreeSet<usize>,
        eligible: &[usize],
        k: usize,
        rng: &mut StreamRng,
    ) -> Vec<usize>;

    /// Feeds one chosen item. `consumed` is the user's set before this event.
    fn observe(
        &mut self,
        user: usize,
        item: usize,
        consumed: &BTreeSet<usize>,
        n_items: usize,
        rng: &mut StreamRng,
    );

    /// Called once after all of a step's events have been observed.
    fn finish_step(&mut self) {}
}

pub enum Model {
    Random(RandomRec),
    Popularity(Popularity),
    ItemKnn(ItemKnn),
    MatrixFactorization(MatrixFactorization),
    Custom(Box<dyn Recommender>),
}

impl Model {
    pub fn from_config(config: &RecommenderConfig, data: &InitData<'_>) -> Result<Model> {
        config.validate("recommender.")?;
        Ok(match config.algorithm {
            Algorithm::Random => Model::Random(RandomRec),
            Algorithm::Popularity => Model::Popularity(Popularity::new(data)),
            Algorithm::ItemKnn => Model::ItemKnn(ItemKnn::new(config.k_neighbors, data)),
            Algorithm::MatrixFactorization => {
                Model::MatrixFactorization(MatrixFactorization::new(config, data))
            }
        })
    }

    fn inner(&self) -> &dyn Recommender {
        match self {
            Model::Random(m) => m,
            Model::Popularity(m) => m,
            Model::ItemKnn(m) => m,
            Model::MatrixFactorization(m) => m,
            Model::Custom(m) => m.as_ref(),
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Recommender {
        match self {
            Model::Random(m) => m,
            Model::Popularity(m) => m,
            Model::ItemKnn(m) => m,
            Model::MatrixFactorization(m) => m,
            Model::Custom(m) => m.as_mut(),
        }
    }
}

/// Sorts `eligible` by descending score, ties by ascending item index, and
/// keeps the first `k`.
pub fn top_k_by_score(eligible: &[usize], score: impl Fn(usize) -> f64, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = eligible.iter().map(|&i| (score(i), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Recommender state for one run: the model plus the per-user consumed sets
/// that drive eligibility.
pub struct RecState {
    items: Vec<String>,
    item_index: HashMap<String, usize>,
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    consumed: Vec<BTreeSet<usize>>,
    model: Model,
    seed: u64,
}

impl RecState {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }

    pub fn consumed(&self, user: usize) -> &BTreeSet<usize> {
        &self.consumed[user]
    }

    pub fn recommend(&self, user_id: &str, k: usize, rng: &mut StreamRng) -> Result<Slate> {
        let u = self
            .user_index(user_id)
            .ok_or_else(|| Error::unknown("user", user_id))?;
        Ok(self
            .recommend_index(u, k, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Slate as item indices. Never contains consumed items or duplicates.
    pub fn recommend_index(&self, user: usize, k: usize, rng: &mut StreamRng) -> Vec<usize> {
        let consumed = &self.consumed[user];
        let eligible: Vec<usize> = (0..self.items.len())
            .filter(|i| !consumed.contains(i))
            .collect();
        if eligible.is_empty() || k == 0 {
            return Vec::new();
        }
        self.model.inner().rank(user, consumed, &eligible, k, rng)
    }

    /// Applies one step's chosen `(user_id, item_id)` events in order.
    pub fn update(&mut self, step: u64, events: &[(String, String)]) -> Result<()> {
        let idx = events
            .iter()
            .map(|(u, i)| {
                let u = self.user_index(u).ok_or_else(|| Error::unknown("user", u))?;
                let i = self.item_index(i).ok_or_else(|| Error::unknown("item", i))?;
                Ok((u, i))
            })
            .collect::<Result<Vec<_>>>()?;
        self.update_indices(step, &idx);
        Ok(())
    }

    pub fn update_indices(&mut self, step: u64, events: &[(usize, usize)]) {
        let mut rng = rng::substream(self.seed, &[Key::Str("rec-update"), Key::Int(step)]);
        let n_items = self.items.len();
        for &(u, i) in events {
            self.model
                .inner_mut()
                .observe(u, i, &self.consumed[u], n_items, &mut rng);
            self.consumed[u].insert(i);
        }
        self.model.inner_mut().finish_step();
    }
}

fn external_indices(
    co: &CoEngagement,
    catalog: &ClassifiedCatalog,
) -> (Vec<HashMap<usize, u32>>, Vec<u32>) {
    let n = catalog.len();
    let mut pairs = vec![HashMap::new(); n];
    let mut degree = vec![0u32; n];
    for (a, row) in &co.pairs {
        let Some(ia) = catalog.index_of(a) else { continue };
        for (b, c) in row {
            if let Some(ib) = catalog.index_of(b) {
                if ia != ib {
                    pairs[ia].insert(ib, *c);
                }
            }
        }
    }
    for (a, c) in &co.item_users {
        if let Some(ia) = catalog.index_of(a) {
            degree[ia] = *c;
        }
    }
    (pairs, degree)
}

fn seed_state(
    catalog: &ClassifiedCatalog,
    users: &[SyntheticUser],
) -> Result<(Vec<Vec<usize>>, Vec<BTreeSet<usize>>, HashMap<String, usize>)> {
    if catalog.is_empty() {
        return Err(Error::validation("catalog", "catalog is empty"));
    }
    let mut user_index = HashMap::with_capacity(users.len());
    let mut histories = Vec::with_capacity(users.len());
    for (ui, u) in users.iter().enumerate() {
        if user_index.insert(u.user_id.clone(), ui).is_some() {
            return Err(Error::Duplicate {
                kind: "user",
                id: u.user_id.clone(),
            });
        }
        let h = u
            .history
            .iter()
            .map(|id| catalog.index_of(id).ok_or_else(|| Error::unknown("item", id)))
            .collect::<Result<Vec<_>>>()?;
        histories.push(h);
    }
    let consumed = histories
        .iter()
        .map(|h| h.iter().copied().collect())
        .collect();
    Ok((histories, consumed, user_index))
}

/// Builds recommender state from the catalog and seed histories. Ingested
/// co-engagement, when given, is added to the item-kNN incidence counts.
pub fn rec_init(
    config: &RecommenderConfig,
    catalog: &ClassifiedCatalog,
    users: &[SyntheticUser],
    co_engagement: Option<&CoEngagement>,
    seed: u64,
) -> Result<RecState> {
    let (histories, consumed, user_index) = seed_state(catalog, users)?;
    let data = InitData {
        n_items: catalog.len(),
        n_users: users.len(),
        histories: &histories,
        consumed: &consumed,
        external: co_engagement.map(|co| external_indices(co, catalog)),
        seed,
    };
    let model = Model::from_config(config, &data)?;
    Ok(assemble(catalog, users, consumed, user_index, model, seed))
}

/// Like [`rec_init`] with a caller-provided algorithm.
pub fn rec_init_custom<F>(
    catalog: &ClassifiedCatalog,
    users: &[SyntheticUser],
    seed: u64,
    build: F,
) -> Result<RecState>
where
    F: FnOnce(&InitData<'_>) -> Box<dyn Recommender>,
{
    let (histories, consumed, user_index) = seed_state(catalog, users)?;
    let data = InitData {
        n_items: catalog.len(),
        n_users: users.len(),
        histories: &histories,
        consumed: &consumed,
        external: None,
        seed,
    };
    let model = Model::Custom(build(&data));
    Ok(assemble(catalog, users, consumed, user_index, model, seed))
}

fn assemble(
    catalog: &ClassifiedCatalog,
    users: &[SyntheticUser],
    consumed: Vec<BTreeSet<usize>>,
    user_index: HashMap<String, usize>,
    model: Model,
    seed: u64,
) -> RecState {
    let items = catalog.item_ids().to_vec();
    let item_index = items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    RecState {
        items,
        item_index,
        users: users.iter().map(|u| u.user_id.clone()).collect(),
        user_index,
        consumed,
        model,
        seed,
    }
}
