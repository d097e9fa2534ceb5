//! Per-domain user clustering and the source-to-target cluster similarity
//! that weighs source items for each target user.

mod kmeans;
mod persist;
mod similarity;
mod solver;
mod spectral;
mod weights;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use kmeans::kmeans;
pub use persist::{read_assignment_csv, read_matrix_csv, write_assignment_csv, write_matrix_csv};
pub use similarity::build_user_similarity;
pub use solver::{cocluster_objective, penalized_objective, solve_cocluster};
pub use spectral::spectral_cluster;
pub use weights::{compute_q, SourceWeights};

use crate::data::{DatasetBundle, RatingMatrix};
use crate::error::{Error, Result};

/// Hard user-to-cluster assignment for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    domain_id: String,
    n_clusters: usize,
    assignment: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(domain_id: impl Into<String>, n_clusters: usize, assignment: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&a| a >= n_clusters) {
            return Err(Error::Validation(format!(
                "cluster index {bad} out of range for {n_clusters} clusters"
            )));
        }
        Ok(ClusterAssignment {
            domain_id: domain_id.into(),
            n_clusters,
            assignment,
        })
    }

    /// Every user in its own cluster.
    pub fn identity(domain_id: impl Into<String>, n: usize) -> Self {
        ClusterAssignment {
            domain_id: domain_id.into(),
            n_clusters: n,
            assignment: (0..n).collect(),
        }
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_users(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, user: usize) -> usize {
        self.assignment[user]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    /// Magnitude of the most negative entry (zero after projection).
    pub nonneg_violation: f64,
    /// `||Y^T Y - I||_F`.
    pub orthogonality_residual: f64,
}

/// Cluster-to-cluster weights between one source domain (rows) and the
/// target (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSimilarity {
    pub y: DMatrix<f64>,
    pub lambda: f64,
    pub residuals: ConstraintResiduals,
    /// Penalized objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterSimilarity {
    pub fn is_near_orthogonal(&self, tol: f64) -> bool {
        self.residuals.orthogonality_residual <= tol
    }
}

/// Which reading of the L2,1 norm the sparsity penalty uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    /// Sum of row 2-norms.
    #[default]
    Rows,
    /// Sum of column 2-norms.
    Columns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoclusterConfig {
    pub c_p: usize,
    pub c_t: usize,
    pub knn_k: usize,
    pub lambda: f64,
    /// Weight of the soft orthogonality penalty `mu * ||Y^T Y - I||_F^2`.
    pub ortho_penalty: f64,
    /// Largest proximal step; backtracking shrinks it as needed.
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub group_axis: GroupAxis,
}

impl Default for CoclusterConfig {
    fn default() -> Self {
        CoclusterConfig {
            c_p: 20,
            c_t: 20,
            knn_k: 10,
            lambda: 0.1,
            ortho_penalty: 1.0,
            step_size: 1e-2,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
            group_axis: GroupAxis::Rows,
        }
    }
}

impl CoclusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_p == 0 || self.c_t == 0 || self.knn_k == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "cluster counts, knn_k and max_iters must be positive".into(),
            ));
        }
        if !(self.tol > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::Config("tol and step_size must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.ortho_penalty >= 0.0) {
            return Err(Error::Config("lambda and ortho_penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Co-clustering outputs for one source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCocluster {
    pub assignment: ClusterAssignment,
    pub similarity: ClusterSimilarity,
    pub weights: SourceWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoclusterOutputs {
    pub target: ClusterAssignment,
    pub sources: Vec<SourceCocluster>,
}

impl CoclusterOutputs {
    pub fn weights(&self) -> Vec<SourceWeights> {
        self.sources.iter().map(|s| s.weights.clone()).collect()
    }
}

/// Clusters a domain's users with the spectral method. The cluster count is
/// capped at the number of users.
pub fn cluster_domain(ratings: &RatingMatrix, n_clusters: usize, knn_k: usize, seed: u64) -> Result<ClusterAssignment> {
    if ratings.n_users() == 0 {
        return ClusterAssignment::new(ratings.domain_id(), n_clusters.max(1), Vec::new());
    }
    let w = build_user_similarity(ratings, knn_k)?;
    let c = n_clusters.min(ratings.n_users());
    let mut a = spectral_cluster(&w, c, seed)?;
    a.domain_id = ratings.domain_id().to_string();
    Ok(a)
}

/// Runs clustering for every domain, then the co-clustering solver and the
/// source weights for every source. `bundle.target` should hold only the
/// ratings the model may see (the training split).
pub fn run_coclustering(bundle: &DatasetBundle, config: &CoclusterConfig) -> Result<CoclusterOutputs> {
    config.validate()?;
    let target = cluster_domain(&bundle.target, config.c_t, config.knn_k, config.seed)?;
    let mut sources = Vec::with_capacity(bundle.sources.len());
    for (p, (src, overlap)) in bundle.sources.iter().zip(&bundle.overlaps).enumerate() {
        let seed = config.seed.wrapping_add(p as u64 + 1);
        let assignment = cluster_domain(src, config.c_p, config.knn_k, seed)?;
        let similarity = solve_cocluster(overlap, &assignment, &target, config)?;
        let weights = compute_q(&similarity, &assignment, &target, src)?;
        sources.push(SourceCocluster {
            assignment,
            similarity,
            weights,
        });
    }
    Ok(CoclusterOutputs { target, sources })
}
