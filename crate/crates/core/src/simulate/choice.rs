//! User choice models and per-user dynamics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::synthgen::convex_toward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceVariant {
    PositionCascade,
    UtilityMultinomial,
}

/// `gamma` is the cascade continuation probability, and the positional decay
/// of the multinomial model. `w0` weighs the no-choice option (multinomial
/// only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceModelConfig {
    pub variant: ChoiceVariant,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub w0: f64,
}

fn default_gamma() -> f64 {
    0.8
}

impl Default for ChoiceModelConfig {
    fn default() -> Self {
        ChoiceModelConfig {
            variant: ChoiceVariant::PositionCascade,
            gamma: default_gamma(),
            w0: 0.0,
        }
    }
}

impl ChoiceModelConfig {
    pub fn validate(&self, at: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::validation(format!("{at}gamma"), "must be in [0, 1]"));
        }
        if !(self.w0 >= 0.0 && self.w0.is_finite()) {
            return Err(Error::validation(format!("{at}w0"), "must be >= 0"));
        }
        Ok(())
    }

    /// Picks at most one slate position. `affinities[r]` is the user's
    /// interest in the category of the item at rank `r + 1`. Returns the
    /// 1-based rank of the chosen item.
    pub fn choose(&self, affinities: &[f64], rng: &mut StreamRng) -> Option<usize> {
        match self.variant {
            ChoiceVariant::PositionCascade => choose_position_cascade(affinities, self.gamma, rng),
            ChoiceVariant::UtilityMultinomial => {
                choose_utility_multinomial(affinities, self.gamma, self.w0, rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default)]
    pub eta_drift: f64,
}

impl DynamicsConfig {
    pub fn validate(&self, at: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_drift) {
            return Err(Error::validation(format!("{at}eta_drift"), "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Top-down scan: at rank `r` click with probability `affinities[r]`;
/// otherwise move on with probability `gamma` or abandon.
pub fn choose_position_cascade(affinities: &[f64], gamma: f64, rng: &mut StreamRng) -> Option<usize> {
    for (r, aff) in affinities.iter().enumerate() {
        if rng.random::<f64>() < *aff {
            return Some(r + 1);
        }
        if r + 1 == affinities.len() || rng.random::<f64>() >= gamma {
            return None;
        }
    }
    None
}

/// `P(rank r) = aff_r gamma^(r-1) / (w0 + sum)`, `P(none) = w0 / (w0 + sum)`.
pub fn choose_utility_multinomial(
    affinities: &[f64],
    gamma: f64,
    w0: f64,
    rng: &mut StreamRng,
) -> Option<usize> {
    let weights: Vec<f64> = affinities
        .iter()
        .enumerate()
        .map(|(r, a)| a * gamma.powi(r as i32))
        .collect();
    let total = w0 + weights.iter().sum::<f64>();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (r, w) in weights.iter().enumerate() {
        acc += w;
        if *w > 0.0 && u < acc {
            return Some(r + 1);
        }
    }
    None
}

/// Moves interest toward the consumed category:
/// `(1 - eta) v + eta e_category`.
pub fn drift_interest(v: &[f64], consumed_category: usize, eta_drift: f64) -> Vec<f64> {
    convex_toward(v, consumed_category, eta_drift)
}

pub fn is_active(p_active: f64, rng: &mut StreamRng) -> bool {
    rng.random::<f64>() < p_active
}
