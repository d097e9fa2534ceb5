use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{DatasetBundle, RatingMatrix};
use crate::error::{Error, Result};

/// An observed item in any domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemRef {
    Target(usize),
    Source { domain: usize, item: usize },
}

/// Observed items per target user: training-split target items plus the
/// items rated by the user's aligned accounts in each source.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivePool {
    target: Vec<Vec<usize>>,
    source: Vec<Vec<Vec<usize>>>,
}

impl PositivePool {
    /// `train` must share the bundle target's index space.
    pub fn new(bundle: &DatasetBundle, train: &RatingMatrix) -> Self {
        let n = bundle.target.n_users();
        let mut target = vec![Vec::new(); n];
        for r in train.entries() {
            target[r.user].push(r.item);
        }
        for t in &mut target {
            t.sort_unstable();
            t.dedup();
        }
        let mut source = vec![vec![Vec::new(); bundle.sources.len()]; n];
        for (p, (src, ov)) in bundle.sources.iter().zip(&bundle.overlaps).enumerate() {
            let rows = src.user_rows();
            for &(k, u) in ov.pairs() {
                source[u][p].extend(rows[k].iter().map(|&(h, _)| h));
            }
        }
        for per_user in &mut source {
            for items in per_user.iter_mut() {
                items.sort_unstable();
                items.dedup();
            }
        }
        PositivePool { target, source }
    }

    pub fn n_users(&self) -> usize {
        self.target.len()
    }

    pub fn target_positives(&self, user: usize) -> &[usize] {
        &self.target[user]
    }

    pub fn source_positives(&self, user: usize, domain: usize) -> &[usize] {
        &self.source[user][domain]
    }

    /// The global observed set of `user`: target items first, then each
    /// source domain in order.
    pub fn global(&self, user: usize) -> Vec<ItemRef> {
        let mut out: Vec<ItemRef> = self.target[user].iter().map(|&i| ItemRef::Target(i)).collect();
        for (domain, items) in self.source[user].iter().enumerate() {
            out.extend(items.iter().map(|&item| ItemRef::Source { domain, item }));
        }
        out
    }
}

/// Draws `count` distinct target items outside the user's training
/// positives, uniformly.
pub fn sample_negatives<R: Rng + ?Sized>(
    user: usize,
    count: usize,
    pool: &PositivePool,
    n_items: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let positives = pool.target_positives(user);
    let available = n_items.saturating_sub(positives.len());
    if count > available {
        return Err(Error::Sampling(format!(
            "user {user} has {available} unobserved items, {count} negatives requested"
        )));
    }
    let is_positive = |i: &usize| positives.binary_search(i).is_ok();
    if count * 4 >= available {
        let mut candidates: Vec<usize> = (0..n_items).filter(|i| !is_positive(i)).collect();
        let (chosen, _) = candidates.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }
    let mut chosen = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    while chosen.len() < count {
        let j = rng.random_range(0..n_items);
        if !is_positive(&j) && seen.insert(j) {
            chosen.push(j);
        }
    }
    Ok(chosen)
}
