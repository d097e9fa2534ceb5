use nalgebra::DMatrix;

use crate::data::RatingMatrix;
use crate::error::{Error, Result};

/// Cosine similarity of user rating rows, sparsified to the union of every
/// user's `knn_k` nearest neighbours. Negative similarities are clamped to
/// zero; users without ratings become isolated vertices.
pub fn build_user_similarity(ratings: &RatingMatrix, knn_k: usize) -> Result<DMatrix<f64>> {
    let n = ratings.n_users();
    if n == 0 {
        return Err(Error::Validation(format!(
            "domain {} has no users to cluster",
            ratings.domain_id()
        )));
    }
    let mut norm = vec![0.0f64; n];
    for r in ratings.entries() {
        norm[r.user] += r.value * r.value;
    }
    norm.iter_mut().for_each(|x| *x = x.sqrt());

    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ratings.n_items()];
    for r in ratings.entries() {
        by_item[r.item].push((r.user, r.value));
    }
    let mut sim = DMatrix::<f64>::zeros(n, n);
    for raters in &by_item {
        for (x, &(a, ra)) in raters.iter().enumerate() {
            for &(b, rb) in &raters[x + 1..] {
                sim[(a, b)] += ra * rb;
                sim[(b, a)] += ra * rb;
            }
        }
    }
    for a in 0..n {
        for b in 0..n {
            let denom = norm[a] * norm[b];
            sim[(a, b)] = if a == b || denom == 0.0 {
                0.0
            } else {
                (sim[(a, b)] / denom).clamp(0.0, 1.0)
            };
        }
    }

    let mut keep = DMatrix::<bool>::from_element(n, n, false);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for a in 0..n {
        order.clear();
        order.extend((0..n).filter(|&b| b != a && sim[(a, b)] > 0.0));
        order.sort_by(|&x, &y| sim[(a, y)].total_cmp(&sim[(a, x)]).then(x.cmp(&y)));
        for &b in order.iter().take(knn_k) {
            keep[(a, b)] = true;
            keep[(b, a)] = true;
        }
    }
    Ok(DMatrix::from_fn(
        n,
        n,
        |a, b| if keep[(a, b)] { sim[(a, b)] } else { 0.0 },
    ))
}
