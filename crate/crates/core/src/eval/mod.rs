//! Ranking metrics and the repeated-split experiment protocol.

mod experiment;
mod report;

pub use experiment::{
    evaluate_ranking, fit_model, grid_search, run_experiment, ExperimentConfig, GridSearch, ModelKind,
    PipelineSettings, TrainedModel,
};
pub use report::{MetricsReport, RunMetrics, UserMetrics};

/// Fraction of `relevant` found in the first `n` entries of `ranked`.
/// `None` when `relevant` is empty. `relevant` must not repeat items.
pub fn recall_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(n).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG over the first `n` positions; the ideal list holds
/// `min(|relevant|, n)` hits. `None` when `relevant` is empty.
pub fn ndcg_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let discount = |j: usize| 1.0 / ((j + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(j, _)| discount(j))
        .sum();
    let ideal: f64 = (0..relevant.len().min(n)).map(discount).sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}
