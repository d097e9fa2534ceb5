use nalgebra::{DMatrix, SymmetricEigen};

use super::{kmeans, ClusterAssignment};
use crate::error::{Error, Result};

const KMEANS_RESTARTS: usize = 10;

/// Spectral clustering on the symmetric normalized Laplacian
/// `I - D^{-1/2} W D^{-1/2}`: the eigenvectors of the `c` smallest
/// eigenvalues form a row embedding which is normalized to unit rows and
/// clustered with seeded k-means++.
pub fn spectral_cluster(w: &DMatrix<f64>, c: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Shape(format!("weight matrix is {}x{}", n, w.ncols())));
    }
    if c == 0 || c > n {
        return Err(Error::Config(format!("cannot form {c} clusters from {n} vertices")));
    }
    for i in 0..n {
        for j in 0..n {
            let x = w[(i, j)];
            if !(x >= 0.0) || x != w[(j, i)] {
                return Err(Error::Validation(
                    "weight matrix must be symmetric and nonnegative".into(),
                ));
            }
        }
    }

    let inv_sqrt_deg: Vec<f64> = w
        .row_iter()
        .map(|row| {
            let d: f64 = row.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j]
    });
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..c].iter().map(|&col| eig.eigenvectors[(i, col)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|x| x / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let labels = kmeans(&embedding, c, seed, KMEANS_RESTARTS);
    ClusterAssignment::new("", c, labels)
}
