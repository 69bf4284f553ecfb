use std::collections::{BTreeSet, HashMap};

use super::{top_k_by_score, InitData, Recommender};
use crate::rng::StreamRng;

/// Cosine similarity of two engagement vectors; 0 when either norm is 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Item-based collaborative filtering over binary user-incidence vectors.
///
/// Incidence is kept as sparse co-occurrence counts, so the cosine of items
/// `i` and `j` is `co(i, j) / sqrt(deg(i) deg(j))`. Each item keeps its
/// `k_neighbors` most similar items (positive similarity only, ties by item
/// index), and a user's score for candidate `i` is the summed similarity of
/// the consumed items that are among `i`'s neighbors, added in item order.
#[derive(Debug, Clone)]
pub struct ItemKnn {
    k_neighbors: usize,
    co: Vec<HashMap<usize, u32>>,
    degree: Vec<u32>,
    neighbors: Vec<Vec<(usize, f64)>>,
    dirty: BTreeSet<usize>,
}

impl ItemKnn {
    pub fn new(k_neighbors: usize, data: &InitData<'_>) -> Self {
        let (mut co, mut degree) = match &data.external {
            Some((pairs, deg)) => (pairs.clone(), deg.clone()),
            None => (vec![HashMap::new(); data.n_items], vec![0; data.n_items]),
        };
        for items in data.consumed {
            let items: Vec<usize> = items.iter().copied().collect();
            for (x, &a) in items.iter().enumerate() {
                degree[a] += 1;
                for &b in &items[x + 1..] {
                    *co[a].entry(b).or_default() += 1;
                    *co[b].entry(a).or_default() += 1;
                }
            }
        }
        let mut knn = ItemKnn {
            k_neighbors,
            co,
            degree,
            neighbors: vec![Vec::new(); data.n_items],
            dirty: (0..data.n_items).collect(),
        };
        knn.refresh();
        knn
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return if self.degree[i] > 0 { 1.0 } else { 0.0 };
        }
        let c = self.co[i].get(&j).copied().unwrap_or(0);
        let (di, dj) = (self.degree[i], self.degree[j]);
        if c == 0 || di == 0 || dj == 0 {
            return 0.0;
        }
        (f64::from(c) / (f64::from(di) * f64::from(dj)).sqrt()).min(1.0)
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn score(&self, consumed: &BTreeSet<usize>, item: usize) -> f64 {
        self.neighbors[item]
            .iter()
            .filter(|(j, _)| consumed.contains(j))
            .map(|(_, s)| s)
            .sum()
    }

    fn refresh(&mut self) {
        let dirty = std::mem::take(&mut self.dirty);
        for i in dirty {
            let mut sims: Vec<(usize, f64)> = self.co[i]
                .keys()
                .map(|&j| (j, self.similarity(i, j)))
                .filter(|(_, s)| *s > 0.0)
                .collect();
            sims.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.truncate(self.k_neighbors);
            // index order makes score sums independent of similarity ranking
            sims.sort_unstable_by_key(|(j, _)| *j);
            self.neighbors[i] = sims;
        }
    }
}

impl Recommender for ItemKnn {
    fn rank(
        &self,
        _user: usize,
        consumed: &BTreeSet<usize>,
        eligible: &[usize],
        k: usize,
        _rng: &mut StreamRng,
    ) -> Vec<usize> {
        top_k_by_score(eligible, |i| self.score(consumed, i), k)
    }

    fn observe(
        &mut self,
        _user: usize,
        item: usize,
        consumed: &BTreeSet<usize>,
        _n_items: usize,
        _rng: &mut StreamRng,
    ) {
        if consumed.contains(&item) {
            return;
        }
        for &j in consumed {
            *self.co[item].entry(j).or_default() += 1;
            *self.co[j].entry(item).or_default() += 1;
        }
        self.degree[item] += 1;
        // deg(item) moved, so every item co-occurring with it has a new cosine
        self.dirty.insert(item);
        self.dirty.extend(self.co[item].keys().copied());
    }

    fn finish_step(&mut self) {
        self.refresh();
    }
}
