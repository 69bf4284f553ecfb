//! Synthetic user cohorts.
//!
//! A cohort is declared by its interest prior, activity level and seed
//! history length. Each user draws from its own substream keyed by
//! (seed, cohort stream, user index), so a cohort's users do not depend on
//! its size or on generation order.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifiedCatalog, Taxonomy};
use crate::error::{Error, Result};
use crate::rng::{self, Key, StreamRng};

pub const SIMPLEX_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Point,
    Dirichlet,
}

/// Interest prior over the user categories of a taxonomy, optionally followed
/// by one extra entry for `unknown`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub kind: PriorKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub target: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub name: String,
    pub size: usize,
    pub prior: Prior,
    pub p_active: f64,
    pub n_hist: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    /// Substream key. Defaults to `name`; the two halves of a marginal pair
    /// share their base cohort's key so that user `i` of each half sees the
    /// same random draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
}

pub fn is_on_simplex(v: &[f64]) -> bool {
    v.iter().all(|x| *x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

fn check_unit(field: String, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::validation(field, format!("{x} is outside [0, 1]")))
    }
}

impl CohortSpec {
    pub fn stream_key(&self) -> &str {
        self.stream.as_deref().unwrap_or(&self.name)
    }

    /// Checks everything that does not need a taxonomy. `at` prefixes field
    /// paths in error messages.
    pub fn validate_shape(&self, at: &str) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::validation(format!("{at}name"), "cohort name is empty"));
        }
        check_unit(format!("{at}p_active"), self.p_active)?;
        let field = format!("{at}prior.values");
        if self.prior.values.is_empty() {
            return Err(Error::validation(field, "prior vector is empty"));
        }
        match self.prior.kind {
            PriorKind::Point => {
                if !is_on_simplex(&self.prior.values) {
                    return Err(Error::validation(
                        field,
                        "point prior must be nonnegative and sum to 1",
                    ));
                }
            }
            PriorKind::Dirichlet => {
                if let Some(i) = self.prior.values.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::validation(
                        format!("{field}[{i}]"),
                        "dirichlet concentrations must be > 0",
                    ));
                }
            }
        }
        if let Some(p) = &self.perturbation {
            check_unit(format!("{at}perturbation.delta"), p.delta)?;
        }
        Ok(())
    }

    pub fn validate(&self, taxonomy: &Taxonomy, at: &str) -> Result<()> {
        self.validate_shape(at)?;
        let n = taxonomy.user_categories().len();
        let len = self.prior.values.len();
        if len != n && len != n + 1 {
            return Err(Error::validation(
                format!("{at}prior.values"),
                format!("expected {n} entries (or {} including unknown), found {len}", n + 1),
            ));
        }
        if let Some(p) = &self.perturbation {
            if taxonomy.index_of(&p.target).is_none() {
                return Err(Error::validation(
                    format!("{at}perturbation.target"),
                    format!("`{}` is not a taxonomy category", p.target),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub user_id: String,
    pub cohort: String,
    /// Substream identity, `<stream>-<index>`.
    pub stream_id: String,
    /// Over the full taxonomy, `unknown` last.
    pub interest: Vec<f64>,
    pub p_active: f64,
    pub history: Vec<String>,
}

/// Convex shift toward a single category: `(1 - delta) v + delta e_target`.
pub fn perturb_interest(v: &[f64], target: usize, delta: f64) -> Result<Vec<f64>> {
    if target >= v.len() {
        return Err(Error::validation(
            "perturbation.target",
            format!("category index {target} out of range for {} categories", v.len()),
        ));
    }
    check_unit("perturbation.delta".into(), delta)?;
    Ok(convex_toward(v, target, delta))
}

pub(crate) fn convex_toward(v: &[f64], target: usize, weight: f64) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(c, x)| (1.0 - weight) * x + if c == target { weight } else { 0.0 })
        .collect()
}

fn sample_dirichlet(alpha: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|a| Gamma::new(*a, 1.0).map_err(|e| Error::validation("prior.values", e.to_string())))
        .collect::<Result<_>>()?;
    for _ in 0..MAX_REDRAWS {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|x| x / total).collect());
        }
    }
    Err(Error::Runtime(
        "dirichlet sampling underflowed; concentrations too small".into(),
    ))
}

fn generate_user(
    spec: &CohortSpec,
    catalog: &ClassifiedCatalog,
    seed: u64,
    index: usize,
) -> Result<SyntheticUser> {
    let taxonomy = catalog.taxonomy();
    let mut rng = rng::substream(seed, &[Key::Str(spec.stream_key()), Key::from(index)]);
    let mut interest = match spec.prior.kind {
        PriorKind::Point => spec.prior.values.clone(),
        PriorKind::Dirichlet => sample_dirichlet(&spec.prior.values, &mut rng)?,
    };
    interest.resize(taxonomy.len(), 0.0);
    if let Some(p) = &spec.perturbation {
        interest = perturb_interest(&interest, taxonomy.require(&p.target)?, p.delta)?;
    }

    let mut history = Vec::with_capacity(spec.n_hist);
    for _ in 0..spec.n_hist {
        let mut picked = None;
        for _ in 0..MAX_REDRAWS {
            let Some(c) = rng::categorical(&interest, &mut rng) else {
                break;
            };
            let pool = catalog.items_in(c);
            if !pool.is_empty() {
                picked = Some(pool[rng.random_range(0..pool.len())]);
                break;
            }
        }
        let item = picked.ok_or_else(|| {
            Error::validation(
                format!("cohorts.{}.prior", spec.name),
                "no catalog items in the categories this prior draws from",
            )
        })?;
        history.push(catalog.item_id(item).to_string());
    }

    Ok(SyntheticUser {
        user_id: format!("{}-{index}", spec.name),
        cohort: spec.name.clone(),
        stream_id: format!("{}-{index}", spec.stream_key()),
        interest,
        p_active: spec.p_active,
        history,
    })
}

/// Generates `spec.size` users ordered by index. Parallel over users; the
/// output does not depend on scheduling.
pub fn generate_cohort(
    spec: &CohortSpec,
    catalog: &ClassifiedCatalog,
    seed: u64,
) -> Result<Vec<SyntheticUser>> {
    spec.validate(catalog.taxonomy(), "")?;
    if spec.size == 0 {
        return Ok(Vec::new());
    }
    if spec.n_hist > 0 && catalog.is_empty() {
        return Err(Error::validation(
            "n_hist",
            "seed histories need a nonempty catalog",
        ));
    }
    (0..spec.size)
        .into_par_iter()
        .map(|i| generate_user(spec, catalog, seed, i))
        .collect()
}

/// Splits `base` into a control cohort and a copy shifted by `delta` toward
/// `target`. Both halves keep the base's substream key.
pub fn make_marginal_pair(
    base: &CohortSpec,
    target: &str,
    delta: f64,
) -> Result<(CohortSpec, CohortSpec)> {
    if base.perturbation.is_some() {
        return Err(Error::validation(
            "perturbation",
            format!("cohort `{}` is already perturbed", base.name),
        ));
    }
    check_unit("delta".into(), delta)?;
    if target.is_empty() {
        return Err(Error::validation("target", "target category is empty"));
    }
    let stream = Some(base.stream_key().to_string());
    let ctrl = CohortSpec {
        name: format!("{}-ctrl", base.name),
        stream: stream.clone(),
        ..base.clone()
    };
    let perturbed = CohortSpec {
        name: format!("{}-perturbed", base.name),
        stream,
        perturbation: Some(Perturbation {
            target: target.to_string(),
            delta,
        }),
        ..base.clone()
    };
    Ok((ctrl, perturbed))
}
