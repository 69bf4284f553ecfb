use std::collections::BTreeSet;

use rand::seq::index;

use super::Recommender;
use crate::rng::StreamRng;

/// Uniform sample without replacement. Ignores feedback.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomRec;

impl Recommender for RandomRec {
    fn rank(
        &self,
        _user: usize,
        _consumed: &BTreeSet<usize>,
        eligible: &[usize],
        k: usize,
        rng: &mut StreamRng,
    ) -> Vec<usize> {
        let n = k.min(eligible.len());
        index::sample(rng, eligible.len(), n)
            .into_iter()
            .map(|i| eligible[i])
            .collect()
    }

    fn observe(&mut self, _: usize, _: usize, _: &BTreeSet<usize>, _: usize, _: &mut StreamRng) {}
}
