//! Sparse cross-domain feature vectors and ranking sample pools.
//!
//! Column layout: target users `[0, n_t)`, target items `[n_t, n_t + m_t)`,
//! then one block of `m_p` columns per source domain in bundle order.

mod pool;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use pool::{sample_negatives, ItemRef, PositivePool};

use crate::coclustering::SourceWeights;
use crate::data::DatasetBundle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub n_users: usize,
    pub n_items: usize,
    pub source_items: Vec<usize>,
}

/// Field a column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    User,
    Item,
    Source(usize),
}

impl FeatureIndex {
    pub fn new(n_users: usize, n_items: usize, source_items: Vec<usize>) -> Self {
        FeatureIndex {
            n_users,
            n_items,
            source_items,
        }
    }

    pub fn build(bundle: &DatasetBundle) -> Self {
        FeatureIndex::new(
            bundle.target.n_users(),
            bundle.target.n_items(),
            bundle.sources.iter().map(|s| s.n_items()).collect(),
        )
    }

    pub fn total_dim(&self) -> usize {
        self.n_users + self.n_items + self.source_items.iter().sum::<usize>()
    }

    pub fn n_sources(&self) -> usize {
        self.source_items.len()
    }

    pub fn user_column(&self, user: usize) -> usize {
        user
    }

    pub fn item_column(&self, item: usize) -> usize {
        self.n_users + item
    }

    pub fn source_block(&self, p: usize) -> Range<usize> {
        let start = self.n_users + self.n_items + self.source_items[..p].iter().sum::<usize>();
        start..start + self.source_items[p]
    }

    pub fn source_column(&self, p: usize, item: usize) -> usize {
        self.source_block(p).start + item
    }

    pub fn field_of(&self, column: usize) -> Option<Field> {
        if column < self.n_users {
            return Some(Field::User);
        }
        if column < self.n_users + self.n_items {
            return Some(Field::Item);
        }
        (0..self.n_sources())
            .find(|&p| self.source_block(p).contains(&column))
            .map(Field::Source)
    }
}

/// Sparse feature vector with strictly increasing column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
    user: usize,
    item_column: usize,
}

impl FeatureVector {
    /// Validates ordering, finiteness and that `item_column` is active.
    pub fn new(entries: Vec<(usize, f64)>, user: usize, item_column: usize) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Validation("feature columns must strictly increase".into()));
        }
        if entries.iter().any(|e| !e.1.is_finite()) {
            return Err(Error::Validation("feature values must be finite".into()));
        }
        if entries.binary_search_by_key(&item_column, |e| e.0).is_err() {
            return Err(Error::Validation(format!("item column {item_column} is not active")));
        }
        Ok(FeatureVector {
            entries,
            user,
            item_column,
        })
    }

    /// Arbitrary sparse input for scoring; `user` and `item_column` are
    /// taken from the first two entries when present.
    pub fn from_entries(entries: Vec<(usize, f64)>) -> Result<Self> {
        let user = entries.first().map_or(0, |e| e.0);
        let item_column = entries.get(1).or(entries.first()).map_or(0, |e| e.0);
        if entries.is_empty() {
            return Ok(FeatureVector {
                entries,
                user,
                item_column,
            });
        }
        FeatureVector::new(entries, user, item_column)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn user(&self) -> usize {
        self.user
    }

    pub fn item_column(&self) -> usize {
        self.item_column
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_column(&self) -> Option<usize> {
        self.entries.last().map(|e| e.0)
    }
}

/// How a source-context entry is valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextValue {
    /// `Q(h, u)`.
    #[default]
    Weight,
    /// `Q(h, u) * rating / max |rating|` of the source domain.
    RatingWeighted,
}

/// Precomputed per-user source context for fast feature construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBuilder {
    index: FeatureIndex,
    context: Vec<Vec<(usize, f64)>>,
}

fn user_context(
    u: usize,
    bundle: &DatasetBundle,
    weights: &[SourceWeights],
    index: &FeatureIndex,
    mode: ContextValue,
    source_rows: &[Vec<Vec<(usize, f64)>>],
    aligned: &[Vec<Vec<usize>>],
) -> Vec<(usize, f64)> {
    let mut ctx = Vec::new();
    for p in 0..bundle.sources.len() {
        let accounts = &aligned[p][u];
        if accounts.is_empty() {
            continue;
        }
        // item -> (rating sum, count) over this user's aligned accounts
        let mut rated: Vec<(usize, f64, usize)> = Vec::new();
        for &k in accounts {
            for &(h, r) in &source_rows[p][k] {
                match rated.iter_mut().find(|e| e.0 == h) {
                    Some(e) => {
                        e.1 += r;
                        e.2 += 1;
                    }
                    None => rated.push((h, r, 1)),
                }
            }
        }
        rated.sort_by_key(|e| e.0);
        let scale = bundle.sources[p].max_abs_rating();
        for (h, sum, count) in rated {
            let q = weights[p].get(h, u);
            let value = match mode {
                ContextValue::Weight => q,
                ContextValue::RatingWeighted if scale > 0.0 => q * (sum / count as f64) / scale,
                ContextValue::RatingWeighted => 0.0,
            };
            ctx.push((index.source_column(p, h), value));
        }
    }
    ctx
}

fn check_weights(bundle: &DatasetBundle, weights: &[SourceWeights]) -> Result<()> {
    if weights.len() != bundle.sources.len() {
        return Err(Error::Shape(format!(
            "{} weight matrices for {} sources",
            weights.len(),
            bundle.sources.len()
        )));
    }
    for (p, (w, s)) in weights.iter().zip(&bundle.sources).enumerate() {
        if w.n_items() != s.n_items() || w.n_target_users() != bundle.target.n_users() {
            return Err(Error::Shape(format!(
                "weights for source {p} are {}x{}, expected {}x{}",
                w.n_items(),
                w.n_target_users(),
                s.n_items(),
                bundle.target.n_users()
            )));
        }
    }
    Ok(())
}

impl FeatureBuilder {
    pub fn new(bundle: &DatasetBundle, weights: &[SourceWeights], mode: ContextValue) -> Result<Self> {
        check_weights(bundle, weights)?;
        let index = FeatureIndex::build(bundle);
        let n = bundle.target.n_users();
        let source_rows: Vec<_> = bundle.sources.iter().map(|s| s.user_rows()).collect();
        let aligned: Vec<_> = bundle.overlaps.iter().map(|o| o.source_users_of(n)).collect();
        let context = (0..n)
            .map(|u| user_context(u, bundle, weights, &index, mode, &source_rows, &aligned))
            .collect();
        Ok(FeatureBuilder { index, context })
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn n_users(&self) -> usize {
        self.index.n_users
    }

    pub fn context(&self, user: usize) -> &[(usize, f64)] {
        &self.context[user]
    }

    /// User column, target item column, then the user's source context.
    pub fn target(&self, user: usize, item: usize) -> Result<FeatureVector> {
        if user >= self.index.n_users || item >= self.index.n_items {
            return Err(Error::Range(format!(
                "(user {user}, item {item}) outside {}x{}",
                self.index.n_users, self.index.n_items
            )));
        }
        let item_column = self.index.item_column(item);
        let mut entries = Vec::with_capacity(2 + self.context[user].len());
        entries.push((self.index.user_column(user), 1.0));
        entries.push((item_column, 1.0));
        entries.extend_from_slice(&self.context[user]);
        Ok(FeatureVector {
            entries,
            user,
            item_column,
        })
    }

    /// Vector ranking an observed source item: the user column, the user's
    /// context, and the item's own source column set to 1.0 as the active
    /// item feature. No target item column is active.
    pub fn source(&self, user: usize, p: usize, item: usize) -> Result<FeatureVector> {
        if user >= self.index.n_users || p >= self.index.n_sources() || item >= self.index.source_items[p] {
            return Err(Error::Range(format!(
                "source item ({user}, domain {p}, item {item}) out of range"
            )));
        }
        let item_column = self.index.source_column(p, item);
        let mut entries = Vec::with_capacity(2 + self.context[user].len());
        entries.push((self.index.user_column(user), 1.0));
        let ctx = &self.context[user];
        let split = ctx.partition_point(|e| e.0 < item_column);
        entries.extend_from_slice(&ctx[..split]);
        entries.push((item_column, 1.0));
        let rest = if ctx.get(split).is_some_and(|e| e.0 == item_column) {
            split + 1
        } else {
            split
        };
        entries.extend_from_slice(&ctx[rest..]);
        Ok(FeatureVector {
            entries,
            user,
            item_column,
        })
    }

    pub fn vector(&self, user: usize, item: ItemRef) -> Result<FeatureVector> {
        match item {
            ItemRef::Target(i) => self.target(user, i),
            ItemRef::Source { domain, item } => self.source(user, domain, item),
        }
    }
}

/// Builds the feature vector of `(u, i)` directly from the bundle.
pub fn build_feature_vector(
    u: usize,
    i: usize,
    bundle: &DatasetBundle,
    weights: &[SourceWeights],
    index: &FeatureIndex,
) -> Result<FeatureVector> {
    check_weights(bundle, weights)?;
    if index != &FeatureIndex::build(bundle) {
        return Err(Error::Shape("feature index does not match bundle".into()));
    }
    if u >= index.n_users || i >= index.n_items {
        return Err(Error::Range(format!(
            "(user {u}, item {i}) outside {}x{}",
            index.n_users, index.n_items
        )));
    }
    let n = bundle.target.n_users();
    let source_rows: Vec<_> = bundle.sources.iter().map(|s| s.user_rows()).collect();
    let aligned: Vec<_> = bundle.overlaps.iter().map(|o| o.source_users_of(n)).collect();
    let ctx = user_context(u, bundle, weights, index, ContextValue::Weight, &source_rows, &aligned);
    let mut entries = vec![(index.user_column(u), 1.0), (index.item_column(i), 1.0)];
    entries.extend(ctx);
    FeatureVector::new(entries, u, index.item_column(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coclustering::{compute_q, ClusterAssignment, ClusterSimilarity, ConstraintResiduals};
    use crate::data::{OverlapMatrix, Rating, RatingMatrix};
    use nalgebra::DMatrix;

    #[test]
    fn layout_arithmetic() {
        let idx = FeatureIndex::new(3, 4, vec![5]);
        assert_eq!(idx.total_dim(), 12);
        assert_eq!(idx.source_block(0), 7..12);
        assert_eq!(FeatureIndex::new(3, 4, vec![]).total_dim(), 7);
        let two = FeatureIndex::new(3, 4, vec![5, 2]);
        assert_eq!((two.source_block(0), two.source_block(1)), (7..12, 12..14));
        assert_eq!(two.field_of(13), Some(Field::Source(1)));
        assert_eq!(two.field_of(14), None);
    }

    /// Target 3 users x 2 items; one source with 4 items. Target user 0 is
    /// aligned with source user 1, who rated items 0 and 2 (or 0, 1, 3).
    fn fixture(source_items: &[usize]) -> (DatasetBundle, Vec<SourceWeights>) {
        let target = RatingMatrix::new(
            "t",
            3,
            2,
            vec![Rating {
                user: 0,
                item: 0,
                value: 1.0,
            }],
        )
        .unwrap();
        let entries = source_items
            .iter()
            .map(|&h| Rating {
                user: 1,
                item: h,
                value: 4.0,
            })
            .collect();
        let source = RatingMatrix::new("s", 2, 4, entries).unwrap();
        let overlap = OverlapMatrix::new("s", vec![(1, 0)], 2, 3).unwrap();
        let bundle = DatasetBundle::new(target, vec![source], vec![overlap]).unwrap();
        let sim = ClusterSimilarity {
            y: DMatrix::from_row_slice(1, 1, &[0.6]),
            lambda: 0.0,
            residuals: ConstraintResiduals {
                nonneg_violation: 0.0,
                orthogonality_residual: 0.0,
            },
            objective_trace: vec![],
            iterations: 0,
        };
        let cp = ClusterAssignment::new("s", 1, vec![0, 0]).unwrap();
        let ct = ClusterAssignment::new("t", 1, vec![0, 0, 0]).unwrap();
        let q = compute_q(&sim, &cp, &ct, &bundle.sources[0]).unwrap();
        (bundle, vec![q])
    }

    #[test]
    fn unaligned_user_has_two_entries() {
        let (bundle, q) = fixture(&[0, 2]);
        let idx = FeatureIndex::build(&bundle);
        let x = build_feature_vector(2, 1, &bundle, &q, &idx).unwrap();
        assert_eq!(x.entries(), &[(2, 1.0), (4, 1.0)]);
    }

    #[test]
    fn single_source_item_carries_q() {
        let (bundle, q) = fixture(&[2]);
        let idx = FeatureIndex::build(&bundle);
        let x = build_feature_vector(0, 1, &bundle, &q, &idx).unwrap();
        assert_eq!(x.entries(), &[(0, 1.0), (4, 1.0), (7, 0.6)]);
    }

    #[test]
    fn three_source_items_sorted() {
        let (bundle, q) = fixture(&[3, 0, 1]);
        let idx = FeatureIndex::build(&bundle);
        let x = build_feature_vector(0, 0, &bundle, &q, &idx).unwrap();
        assert_eq!(x.len(), 5);
        assert!(x.entries().windows(2).all(|w| w[0].0 < w[1].0));
        let builder = FeatureBuilder::new(&bundle, &q, ContextValue::Weight).unwrap();
        assert_eq!(builder.target(0, 0).unwrap(), x);
    }

    #[test]
    fn invalid_indices_are_range_errors() {
        let (bundle, q) = fixture(&[0]);
        let idx = FeatureIndex::build(&bundle);
        assert!(matches!(
            build_feature_vector(3, 0, &bundle, &q, &idx),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            build_feature_vector(0, 2, &bundle, &q, &idx),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn source_positive_replaces_its_context_entry() {
        let (bundle, q) = fixture(&[0, 2]);
        let b = FeatureBuilder::new(&bundle, &q, ContextValue::Weight).unwrap();
        let x = b.source(0, 0, 2).unwrap();
        assert_eq!(x.entries(), &[(0, 1.0), (5, 0.6), (7, 1.0)]);
        assert_eq!(x.item_column(), 7);
    }

    #[test]
    fn rating_weighted_context() {
        let (bundle, q) = fixture(&[1]);
        let b = FeatureBuilder::new(&bundle, &q, ContextValue::RatingWeighted).unwrap();
        let x = b.target(0, 0).unwrap();
        assert_eq!(x.entries()[2], (6, 0.6));
    }

    #[test]
    fn vector_rejects_unsorted() {
        assert!(FeatureVector::new(vec![(3, 1.0), (1, 1.0)], 0, 1).is_err());
        assert!(FeatureVector::new(vec![(0, 1.0), (1, 1.0)], 0, 2).is_err());
    }
}
