use nalgebra::DMatrix;

use super::{ClusterAssignment, ClusterSimilarity};
use crate::data::RatingMatrix;
use crate::error::{Error, Result};

/// Weights `Q(h, u)` of source items for target users.
///
/// `Q(h, u)` is the mean of `Y(C_p(k), C_t(u))` over the source users `k`
/// who rated item `h`, so it depends on `u` only through its target cluster.
/// It is stored as an `m_p x c_t` table plus the target assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceWeights {
    table: DMatrix<f64>,
    target_assignment: Vec<usize>,
}

impl SourceWeights {
    pub fn n_items(&self) -> usize {
        self.table.nrows()
    }

    pub fn n_target_users(&self) -> usize {
        self.target_assignment.len()
    }

    pub fn get(&self, item: usize, user: usize) -> f64 {
        self.table[(item, self.target_assignment[user])]
    }

    /// Per-item, per-target-cluster table.
    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    /// Full `m_p x n_t` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_items(), self.n_target_users(), |h, u| self.get(h, u))
    }
}

pub fn compute_q(
    similarity: &ClusterSimilarity,
    cp: &ClusterAssignment,
    ct: &ClusterAssignment,
    source: &RatingMatrix,
) -> Result<SourceWeights> {
    let y = &similarity.y;
    if y.nrows() != cp.n_clusters() || y.ncols() != ct.n_clusters() {
        return Err(Error::Shape(format!(
            "Y is {}x{} but assignments have {} and {} clusters",
            y.nrows(),
            y.ncols(),
            cp.n_clusters(),
            ct.n_clusters()
        )));
    }
    if cp.n_users() != source.n_users() {
        return Err(Error::Shape(format!(
            "source assignment covers {} users, ratings have {}",
            cp.n_users(),
            source.n_users()
        )));
    }
    let mut table = DMatrix::zeros(source.n_items(), ct.n_clusters());
    for (h, raters) in source.item_raters().iter().enumerate() {
        if raters.is_empty() {
            continue;
        }
        for b in 0..ct.n_clusters() {
            let sum: f64 = raters.iter().map(|&k| y[(cp.cluster_of(k), b)]).sum();
            table[(h, b)] = sum / raters.len() as f64;
        }
    }
    Ok(SourceWeights {
        table,
        target_assignment: ct.assignment().to_vec(),
    })
}
