use std::collections::BTreeSet;

use rand::Rng;

use super::{top_k_by_score, InitData, Recommender, RecommenderConfig};
use crate::rng::{self, Key, StreamRng};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regularized squared loss of one observation:
/// `0.5 (r - u.v)^2 + 0.5 reg (|u|^2 + |v|^2)`.
pub fn mf_loss(u: &[f64], v: &[f64], r: f64, reg: f64) -> f64 {
    let e = r - dot(u, v);
    0.5 * e * e + 0.5 * reg * (dot(u, u) + dot(v, v))
}

/// Analytic gradient of [`mf_loss`] with respect to `(u, v)`.
pub fn mf_gradient(u: &[f64], v: &[f64], r: f64, reg: f64) -> (Vec<f64>, Vec<f64>) {
    let e = r - dot(u, v);
    let gu = u.iter().zip(v).map(|(ui, vi)| -e * vi + reg * ui).collect();
    let gv = u.iter().zip(v).map(|(ui, vi)| -e * ui + reg * vi).collect();
    (gu, gv)
}

/// One simultaneous SGD update on observed label `r` (1 positive, 0 negative):
/// `e = r - u.v; u += lr (e v - reg u); v += lr (e u - reg v)`.
pub fn mf_sgd_step(u: &mut [f64], v: &mut [f64], r: f64, lr: f64, reg: f64) {
    let e = r - dot(u, v);
    for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
        let (a, b) = (*ui, *vi);
        *ui = a + lr * (e * b - reg * a);
        *vi = b + lr * (e * a - reg * b);
    }
}

/// Implicit-feedback matrix factorization trained by SGD with uniform negative
/// sampling from each user's unconsumed items.
#[derive(Debug, Clone)]
pub struct MatrixFactorization {
    dim: usize,
    lr: f64,
    reg: f64,
    negatives: usize,
    users: Vec<f64>,
    items: Vec<f64>,
}

impl MatrixFactorization {
    pub fn new(config: &RecommenderConfig, data: &InitData<'_>) -> Self {
        let dim = config.latent_dim;
        let bound = 0.1 / (dim as f64).sqrt();
        let mut init = rng::substream(data.seed, &[Key::Str("mf-init")]);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * dim)
                .map(|_| init.random_range(-bound..=bound))
                .collect()
        };
        let users = draw(data.n_users);
        let items = draw(data.n_items);
        let mut mf = MatrixFactorization {
            dim,
            lr: config.learning_rate,
            reg: config.regularization,
            negatives: config.negative_ratio,
            users,
            items,
        };
        let mut train = rng::substream(data.seed, &[Key::Str("mf-train")]);
        for _ in 0..config.epochs_init {
            for (u, history) in data.histories.iter().enumerate() {
                for &i in history {
                    mf.train_positive(u, i, &data.consumed[u], data.n_items, &mut train);
                }
            }
        }
        mf
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_factors(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_factors(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user_factors(u), self.item_factors(i))
    }

    fn step(&mut self, u: usize, i: usize, r: f64) {
        let d = self.dim;
        let uf = &mut self.users[u * d..(u + 1) * d];
        let vf = &mut self.items[i * d..(i + 1) * d];
        mf_sgd_step(uf, vf, r, self.lr, self.reg);
    }

    /// SGD on one positive followed by `negatives` sampled negatives. Items in
    /// `exclude` or equal to the positive are never drawn as negatives.
    fn train_positive(
        &mut self,
        u: usize,
        pos: usize,
        exclude: &BTreeSet<usize>,
        n_items: usize,
        rng: &mut StreamRng,
    ) {
        self.step(u, pos, 1.0);
        let blocked = exclude.len() + usize::from(!exclude.contains(&pos));
        if blocked >= n_items {
            return;
        }
        for _ in 0..self.negatives {
            // rejection sampling is uniform over the unblocked items
            let neg = loop {
                let j = rng.random_range(0..n_items);
                if j != pos && !exclude.contains(&j) {
                    break j;
                }
            };
            self.step(u, neg, 0.0);
        }
    }
}

impl Recommender for MatrixFactorization {
    fn rank(
        &self,
        user: usize,
        _consumed: &BTreeSet<usize>,
        eligible: &[usize],
        k: usize,
        _rng: &mut StreamRng,
    ) -> Vec<usize> {
        top_k_by_score(eligible, |i| self.score(user, i), k)
    }

    fn observe(
        &mut self,
        user: usize,
        item: usize,
        consumed: &BTreeSet<usize>,
        n_items: usize,
        rng: &mut StreamRng,
    ) {
        self.train_positive(user, item, consumed, n_items, rng);
    }
}
