use std::collections::BTreeSet;

use super::{top_k_by_score, InitData, Recommender};
use crate::rng::StreamRng;

/// Most-consumed items first, ties by item id.
#[derive(Debug, Clone)]
pub struct Popularity {
    counts: Vec<u64>,
}

impl Popularity {
    pub fn new(data: &InitData<'_>) -> Self {
        let mut counts = vec![0u64; data.n_items];
        for h in data.histories {
            for &i in h {
                counts[i] += 1;
            }
        }
        Popularity { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

impl Recommender for Popularity {
    fn rank(
        &self,
        _user: usize,
        _consumed: &BTreeSet<usize>,
        eligible: &[usize],
        k: usize,
        _rng: &mut StreamRng,
    ) -> Vec<usize> {
        top_k_by_score(eligible, |i| self.counts[i] as f64, k)
    }

    fn observe(&mut self, _user: usize, item: usize, _: &BTreeSet<usize>, _: usize, _: &mut StreamRng) {
        self.counts[item] += 1;
    }
}
