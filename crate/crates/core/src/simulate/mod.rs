//! Discrete-time simulation of synthetic users interacting with a
//! recommender.
//!
//! Each step, every user independently decides whether to take part, is
//! shown a slate, and picks at most one item. The recommender sees all of a
//! step's choices together after the sweep, so the order in which users are
//! visited never affects the outcome.

mod choice;
mod log;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::ClassifiedCatalog;
use crate::error::{Error, Result};
use crate::ingest::CoEngagement;
use crate::recommenders::{rec_init, RecState, RecommenderConfig};
use crate::rng::{self, Key};
use crate::synthgen::{generate_cohort, CohortSpec, SyntheticUser};

pub use choice::{
    choose_position_cascade, choose_utility_multinomial, drift_interest, is_active,
    ChoiceModelConfig, ChoiceVariant, DynamicsConfig,
};
pub use log::{Chosen, CohortSummary, ExposureLog, LogHeader, Record, SlateEntry, LOG_FORMAT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: u64,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub recommender: RecommenderConfig,
    #[serde(default)]
    pub choice: ChoiceModelConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub cohorts: Vec<CohortSpec>,
}

impl SimulationConfig {
    /// Validates everything except the taxonomy-dependent cohort checks.
    pub fn validate_shape(&self, at: &str) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::validation(format!("{at}steps"), "must be >= 1"));
        }
        if self.k < 1 {
            return Err(Error::validation(format!("{at}k"), "must be >= 1"));
        }
        self.recommender.validate(&format!("{at}recommender."))?;
        self.choice.validate(&format!("{at}choice."))?;
        self.dynamics.validate(&format!("{at}dynamics."))?;
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.cohorts.iter().enumerate() {
            c.validate_shape(&format!("{at}cohorts[{i}]."))?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::validation(
                    format!("{at}cohorts[{i}].name"),
                    format!("duplicate cohort name `{}`", c.name),
                ));
            }
        }
        if !self.cohorts.iter().any(|c| c.size >= 1) {
            return Err(Error::validation(
                format!("{at}cohorts"),
                "at least one cohort with size >= 1 is required",
            ));
        }
        Ok(())
    }

    pub fn validate(&self, catalog: &ClassifiedCatalog, at: &str) -> Result<()> {
        self.validate_shape(at)?;
        for (i, c) in self.cohorts.iter().enumerate() {
            c.validate(catalog.taxonomy(), &format!("{at}cohorts[{i}]."))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's json serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// How the per-step user sweep is executed. All variants produce identical
/// logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Sweep {
    #[default]
    Parallel,
    Sequential,
    Reverse,
}

pub struct Simulation<'a> {
    config: &'a SimulationConfig,
    catalog: &'a ClassifiedCatalog,
    co_engagement: Option<&'a CoEngagement>,
    users: Option<Vec<SyntheticUser>>,
    sweep: Sweep,
}

struct Outcome {
    slate: Vec<usize>,
    chosen: Option<usize>,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a SimulationConfig, catalog: &'a ClassifiedCatalog) -> Self {
        Simulation {
            config,
            catalog,
            co_engagement: None,
            users: None,
            sweep: Sweep::default(),
        }
    }

    pub fn co_engagement(mut self, co: Option<&'a CoEngagement>) -> Self {
        self.co_engagement = co;
        self
    }

    /// Uses pre-generated users instead of generating the configured cohorts.
    /// Every user's cohort must be declared in the config.
    pub fn users(mut self, users: Vec<SyntheticUser>) -> Self {
        self.users = Some(users);
        self
    }

    pub fn sweep(mut self, sweep: Sweep) -> Self {
        self.sweep = sweep;
        self
    }

    pub fn run(self) -> Result<ExposureLog> {
        self.run_observed(|_, _| {})
    }

    /// Runs and calls `observe(t, users)` after every step (t = 0 before the
    /// first step) with the users' current interest vectors.
    pub fn run_observed<F>(self, mut observe: F) -> Result<ExposureLog>
    where
        F: FnMut(u64, &[SyntheticUser]),
    {
        let cfg = self.config;
        let catalog = self.catalog;
        cfg.validate(catalog, "")?;

        let mut users = match self.users {
            Some(users) => order_users(cfg, catalog, users)?,
            None => {
                let mut all = Vec::new();
                for spec in &cfg.cohorts {
                    all.extend(generate_cohort(spec, catalog, cfg.seed)?);
                }
                all
            }
        };
        let header = build_header(cfg, catalog, &users);
        let mut state = rec_init(&cfg.recommender, catalog, &users, self.co_engagement, cfg.seed)?;
        observe(0, &users);

        let mut records = Vec::new();
        for t in 1..=cfg.steps {
            let outcomes = sweep_step(self.sweep, cfg, catalog, &state, &mut users, t);
            let mut events = Vec::new();
            for (ui, outcome) in outcomes.into_iter().enumerate() {
                let Some(o) = outcome else { continue };
                let user = &users[ui];
                if let Some(rank) = o.chosen {
                    events.push((ui, o.slate[rank - 1]));
                }
                records.push(Record {
                    t,
                    user: user.user_id.clone(),
                    cohort: user.cohort.clone(),
                    slate: o
                        .slate
                        .iter()
                        .map(|&i| SlateEntry {
                            item: catalog.item_id(i).to_string(),
                            cat: catalog.category_name(i).to_string(),
                        })
                        .collect(),
                    chosen: o.chosen.map(|rank| Chosen {
                        item: catalog.item_id(o.slate[rank - 1]).to_string(),
                        rank,
                    }),
                });
            }
            state.update_indices(t, &events);
            observe(t, &users);
        }
        Ok(ExposureLog { header, records })
    }
}

/// Convenience wrapper: generate cohorts, run with the default sweep.
pub fn simulate(
    config: &SimulationConfig,
    catalog: &ClassifiedCatalog,
    co_engagement: Option<&CoEngagement>,
) -> Result<ExposureLog> {
    Simulation::new(config, catalog)
        .co_engagement(co_engagement)
        .run()
}

fn order_users(
    cfg: &SimulationConfig,
    catalog: &ClassifiedCatalog,
    users: Vec<SyntheticUser>,
) -> Result<Vec<SyntheticUser>> {
    let mut by_cohort: Vec<Vec<SyntheticUser>> = vec![Vec::new(); cfg.cohorts.len()];
    for u in users {
        let field = || format!("users[{}].interest", u.user_id);
        if u.interest.len() != catalog.taxonomy().len() {
            return Err(Error::validation(field(), "length differs from the taxonomy"));
        }
        if !crate::synthgen::is_on_simplex(&u.interest) {
            return Err(Error::validation(field(), "not a probability vector"));
        }
        if !(0.0..=1.0).contains(&u.p_active) {
            return Err(Error::validation(format!("users[{}].p_active", u.user_id), "must be in [0, 1]"));
        }
        let ci = cfg
            .cohorts
            .iter()
            .position(|c| c.name == u.cohort)
            .ok_or_else(|| Error::unknown("cohort", &u.cohort))?;
        by_cohort[ci].push(u);
    }
    Ok(by_cohort.into_iter().flatten().collect())
}

fn build_header(cfg: &SimulationConfig, catalog: &ClassifiedCatalog, users: &[SyntheticUser]) -> LogHeader {
    let dims = catalog.taxonomy().len();
    let cohorts = cfg
        .cohorts
        .iter()
        .map(|c| {
            let members: Vec<&SyntheticUser> = users.iter().filter(|u| u.cohort == c.name).collect();
            let mean = (!members.is_empty()).then(|| {
                let mut m = vec![0.0; dims];
                for u in &members {
                    for (a, b) in m.iter_mut().zip(&u.interest) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|x| *x /= members.len() as f64);
                m
            });
            CohortSummary {
                name: c.name.clone(),
                size: members.len(),
                initial_interest_mean: mean,
            }
        })
        .collect();
    LogHeader {
        format: LOG_FORMAT.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps: cfg.steps,
        k: cfg.k,
        taxonomy: catalog.taxonomy().categories().to_vec(),
        cohorts,
        items: catalog.item_ids().to_vec(),
    }
}

fn step_user(
    cfg: &SimulationConfig,
    catalog: &ClassifiedCatalog,
    state: &RecState,
    ui: usize,
    user: &mut SyntheticUser,
    t: u64,
) -> Option<Outcome> {
    let keys = |tag: &'static str| {
        rng::substream(
            cfg.seed,
            &[Key::Str(&user.stream_id), Key::Int(t), Key::Str(tag)],
        )
    };
    if !is_active(user.p_active, &mut keys("act")) {
        return None;
    }
    let slate = state.recommend_index(ui, cfg.k, &mut keys("rec"));
    if slate.is_empty() {
        return Some(Outcome { slate, chosen: None });
    }
    let affinities: Vec<f64> = slate
        .iter()
        .map(|&i| user.interest[catalog.category_of(i)])
        .collect();
    let chosen = cfg.choice.choose(&affinities, &mut keys("choice"));
    if let Some(rank) = chosen {
        let cat = catalog.category_of(slate[rank - 1]);
        user.interest = drift_interest(&user.interest, cat, cfg.dynamics.eta_drift);
    }
    Some(Outcome { slate, chosen })
}

fn sweep_step(
    sweep: Sweep,
    cfg: &SimulationConfig,
    catalog: &ClassifiedCatalog,
    state: &RecState,
    users: &mut [SyntheticUser],
    t: u64,
) -> Vec<Option<Outcome>> {
    match sweep {
        Sweep::Parallel => users
            .par_iter_mut()
            .enumerate()
            .map(|(ui, u)| step_user(cfg, catalog, state, ui, u, t))
            .collect(),
        Sweep::Sequential => users
            .iter_mut()
            .enumerate()
            .map(|(ui, u)| step_user(cfg, catalog, state, ui, u, t))
            .collect(),
        Sweep::Reverse => {
            let mut out: Vec<Option<Outcome>> = (0..users.len()).map(|_| None).collect();
            for (ui, u) in users.iter_mut().enumerate().rev() {
                out[ui] = step_user(cfg, catalog, state, ui, u, t);
            }
            out
        }
    }
}
