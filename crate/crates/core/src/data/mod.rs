//! Multi-domain rating data: per-domain rating matrices, shared-user
//! alignments, target splits, relevance labels and a planted synthetic
//! generator.

mod io;
mod relevance;
mod split;
mod synth;

use std::collections::{HashMap, HashSet};

pub use io::{load_bundle, load_overlap, load_ratings, write_bundle, BundleFiles, SourceFiles};
pub use relevance::{label_relevance, RelevanceSets};
pub use split::{split_target, SplitSpec, TargetSplit};
pub use synth::{synth_generate, PlantedTruth, SynthConfig, SyntheticBundle};

use crate::error::{Error, Result};

/// A single observed preference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Sparse user-item preference matrix of one domain.
///
/// User and item indices are dense per domain; the original string ids are
/// kept so that alignments and exports can refer back to them.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    domain_id: String,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    entries: Vec<Rating>,
}

impl RatingMatrix {
    /// Builds a matrix over `n_users x n_items` with generated ids `u{k}` / `i{h}`.
    pub fn new(domain_id: impl Into<String>, n_users: usize, n_items: usize, entries: Vec<Rating>) -> Result<Self> {
        let user_ids = (0..n_users).map(|k| format!("u{k}")).collect();
        let item_ids = (0..n_items).map(|h| format!("i{h}")).collect();
        Self::with_ids(domain_id, user_ids, item_ids, entries)
    }

    pub fn with_ids(
        domain_id: impl Into<String>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        entries: Vec<Rating>,
    ) -> Result<Self> {
        let domain_id = domain_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for r in &entries {
            if r.user >= user_ids.len() || r.item >= item_ids.len() {
                return Err(Error::Validation(format!(
                    "domain {domain_id}: entry ({}, {}) outside {}x{}",
                    r.user,
                    r.item,
                    user_ids.len(),
                    item_ids.len()
                )));
            }
            if !r.value.is_finite() {
                return Err(Error::Validation(format!(
                    "domain {domain_id}: non-finite rating for ({}, {})",
                    r.user, r.item
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Validation(format!(
                    "domain {domain_id}: duplicate entry for user {} item {}",
                    user_ids[r.user], item_ids[r.item]
                )));
            }
        }
        Ok(RatingMatrix {
            domain_id,
            user_ids,
            item_ids,
            entries,
        })
    }

    /// Same index space and ids, different entries.
    pub(crate) fn with_entries(&self, entries: Vec<Rating>) -> Self {
        RatingMatrix {
            domain_id: self.domain_id.clone(),
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            entries,
        }
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub(crate) fn user_lookup(&self) -> HashMap<&str, usize> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect()
    }

    /// Per-user rows of `(item, rating)`, items ascending.
    pub fn user_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_users()];
        for r in &self.entries {
            rows[r.user].push((r.item, r.value));
        }
        for row in &mut rows {
            row.sort_by_key(|&(i, _)| i);
        }
        rows
    }

    /// Per-item rater lists, users ascending.
    pub fn item_raters(&self) -> Vec<Vec<usize>> {
        let mut raters = vec![Vec::new(); self.n_items()];
        for r in &self.entries {
            raters[r.item].push(r.user);
        }
        for list in &mut raters {
            list.sort_unstable();
        }
        raters
    }

    pub fn max_abs_rating(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, r| m.max(r.value.abs()))
    }
}

/// Binary shared-user alignment between one source domain and the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMatrix {
    source_domain: String,
    pairs: Vec<(usize, usize)>,
}

impl OverlapMatrix {
    /// Deduplicates and sorts `pairs` of `(source_user, target_user)`.
    pub fn new(
        source_domain: impl Into<String>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        n_source_users: usize,
        n_target_users: usize,
    ) -> Result<Self> {
        let source_domain = source_domain.into();
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        if let Some(&(k, u)) = pairs.iter().find(|&&(k, u)| k >= n_source_users || u >= n_target_users) {
            return Err(Error::Validation(format!(
                "overlap {source_domain}: pair ({k}, {u}) outside {n_source_users}x{n_target_users}"
            )));
        }
        Ok(OverlapMatrix { source_domain, pairs })
    }

    pub fn source_domain(&self) -> &str {
        &self.source_domain
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Source accounts aligned with each target user.
    pub fn source_users_of(&self, n_target_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_target_users];
        for &(k, u) in &self.pairs {
            out[u].push(k);
        }
        out
    }
}

/// A target domain together with its source domains and their alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub target: RatingMatrix,
    pub sources: Vec<RatingMatrix>,
    pub overlaps: Vec<OverlapMatrix>,
}

impl DatasetBundle {
    pub fn new(target: RatingMatrix, sources: Vec<RatingMatrix>, overlaps: Vec<OverlapMatrix>) -> Result<Self> {
        let bundle = DatasetBundle {
            target,
            sources,
            overlaps,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() != self.overlaps.len() {
            return Err(Error::Validation(format!(
                "{} source domains but {} overlap matrices",
                self.sources.len(),
                self.overlaps.len()
            )));
        }
        for (src, ov) in self.sources.iter().zip(&self.overlaps) {
            if let Some(&(k, u)) = ov
                .pairs()
                .iter()
                .find(|&&(k, u)| k >= src.n_users() || u >= self.target.n_users())
            {
                return Err(Error::Validation(format!(
                    "overlap for {} references missing user pair ({k}, {u})",
                    src.domain_id()
                )));
            }
        }
        Ok(())
    }

    /// Total number of domains `d` (target plus sources).
    pub fn n_domains(&self) -> usize {
        1 + self.sources.len()
    }

    /// Same sources and overlaps with the target replaced by `target`, which
    /// must share the original index space (e.g. a training split).
    pub fn with_target(&self, target: RatingMatrix) -> Result<Self> {
        if target.n_users() != self.target.n_users() || target.n_items() != self.target.n_items() {
            return Err(Error::Shape(format!(
                "replacement target is {}x{}, expected {}x{}",
                target.n_users(),
                target.n_items(),
                self.target.n_users(),
                self.target.n_items()
            )));
        }
        Ok(DatasetBundle {
            target,
            sources: self.sources.clone(),
            overlaps: self.overlaps.clone(),
        })
    }

    /// The target domain alone, with every source dropped.
    pub fn target_only(&self) -> Self {
        DatasetBundle {
            target: self.target.clone(),
            sources: Vec::new(),
            overlaps: Vec::new(),
        }
    }
}
