use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accumulate_gradient, score_fast, EntryGradient, Interaction, ModelParams, TrainConfig};
use crate::coclustering::SourceWeights;
use crate::data::{DatasetBundle, RatingMatrix};
use crate::error::{Error, Result};
use crate::features::{sample_negatives, FeatureBuilder, FeatureVector, ItemRef, PositivePool};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean BPR loss (without regularization) per epoch.
    pub epoch_loss: Vec<f64>,
    /// Number of (positive, negative) pairs processed.
    pub samples: usize,
}

/// Anything that scores a feature vector.
pub trait RankingModel {
    fn score(&self, x: &FeatureVector) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdtModel {
    pub params: ModelParams,
    pub interaction: Interaction,
}

impl RankingModel for CdtModel {
    fn score(&self, x: &FeatureVector) -> Result<f64> {
        score_fast(&self.params, x, self.interaction)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `-ln sigmoid(s_pos - s_neg)`, evaluated as a softplus.
pub fn bpr_pair_loss(s_pos: f64, s_neg: f64) -> f64 {
    softplus(s_neg - s_pos)
}

/// Gradient of one BPR pair objective over the columns it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub w0: f64,
    /// Touched columns, ascending.
    pub columns: Vec<usize>,
    /// `(dw, dv, dvt)` per touched column.
    pub slots: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

fn touched(x_pos: &FeatureVector, x_neg: &FeatureVector) -> Vec<usize> {
    let mut cols: Vec<usize> = x_pos.entries().iter().chain(x_neg.entries()).map(|e| e.0).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// `bpr_pair_loss` plus `reg_w/2 * w_i^2 + reg_v/2 * (|v_i|^2 + |v'_i|^2)`
/// over every column active in either vector.
pub fn pair_objective(
    params: &ModelParams,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
) -> Result<f64> {
    let inter = config.interaction();
    let loss = bpr_pair_loss(score_fast(params, x_pos, inter)?, score_fast(params, x_neg, inter)?);
    let mut reg = 0.0;
    for i in touched(x_pos, x_neg) {
        reg += 0.5 * config.reg_w * params.w[i] * params.w[i];
        reg += 0.5 * config.reg_v * params.embedding(i).iter().map(|x| x * x).sum::<f64>();
        if !config.freeze_translations {
            reg += 0.5 * config.reg_v * params.translation(i).iter().map(|x| x * x).sum::<f64>();
        }
    }
    Ok(loss + reg)
}

/// Reusable buffers for [`train_step_with`].
#[derive(Debug, Clone, Default)]
pub struct StepScratch {
    pos: EntryGradient,
    neg: EntryGradient,
}

/// `d loss / d (s_pos - s_neg)` and the loss, with per-entry score
/// gradients of both vectors scaled accordingly.
fn pair_entry_gradients(
    params: &ModelParams,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    inter: Interaction,
    scratch: &mut StepScratch,
) -> Result<f64> {
    let diff = score_fast(params, x_pos, inter)? - score_fast(params, x_neg, inter)?;
    let outer = -sigmoid(-diff);
    scratch.pos.reset(x_pos.len(), params.q);
    scratch.neg.reset(x_neg.len(), params.q);
    accumulate_gradient(params, x_pos, inter, outer, &mut scratch.pos);
    accumulate_gradient(params, x_neg, inter, -outer, &mut scratch.neg);
    Ok(softplus(-diff))
}

/// BPR loss of the pair and the gradient of [`pair_objective`].
pub fn pair_gradient(
    params: &ModelParams,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
) -> Result<(f64, ParamGradient)> {
    let mut scratch = StepScratch::default();
    let loss = pair_entry_gradients(params, x_pos, x_neg, config.interaction(), &mut scratch)?;
    let q = params.q;
    // the w0 derivatives of the two vectors cancel
    let w0 = 0.0;

    let columns = touched(x_pos, x_neg);
    let mut slots = vec![(0.0, vec![0.0; q], vec![0.0; q]); columns.len()];
    for (x, part) in [(x_pos, &scratch.pos), (x_neg, &scratch.neg)] {
        for (slot, &(col, _)) in x.entries().iter().enumerate() {
            let s = &mut slots[columns.binary_search(&col).expect("touched column")];
            s.0 += part.dw[slot];
            s.1.iter_mut().zip(part.dv(slot)).for_each(|(a, b)| *a += b);
            s.2.iter_mut().zip(part.dvt(slot)).for_each(|(a, b)| *a += b);
        }
    }
    for (&i, s) in columns.iter().zip(slots.iter_mut()) {
        s.0 += config.reg_w * params.w[i];
        s.1.iter_mut()
            .zip(params.embedding(i))
            .for_each(|(g, v)| *g += config.reg_v * v);
        if config.freeze_translations {
            s.2.iter_mut().for_each(|g| *g = 0.0);
        } else {
            s.2.iter_mut()
                .zip(params.translation(i))
                .for_each(|(g, v)| *g += config.reg_v * v);
        }
    }
    Ok((loss, ParamGradient { w0, columns, slots }))
}

/// One SGD update on a (positive, negative) pair. Returns the BPR loss
/// before the update.
pub fn train_step(
    params: &mut ModelParams,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
) -> Result<f64> {
    train_step_with(params, x_pos, x_neg, config, &mut StepScratch::default())
}

/// [`train_step`] with caller-owned buffers.
pub fn train_step_with(
    params: &mut ModelParams,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
    scratch: &mut StepScratch,
) -> Result<f64> {
    let loss = pair_entry_gradients(params, x_pos, x_neg, config.interaction(), scratch)?;
    let lr = config.learn_rate;
    let q = params.q;
    // All gradients were taken before this point, so applying the two
    // vectors' contributions one after the other is a single SGD step.
    for (x, part, other) in [(x_pos, &scratch.pos, None), (x_neg, &scratch.neg, Some(x_pos))] {
        for (slot, &(i, _)) in x.entries().iter().enumerate() {
            let seen = other.is_some_and(|o: &FeatureVector| o.entries().binary_search_by_key(&i, |e| e.0).is_ok());
            let reg = if seen { 0.0 } else { 1.0 };
            params.w[i] -= lr * (part.dw[slot] + reg * config.reg_w * params.w[i]);
            let (v, vt) = (&mut params.v[i * q..(i + 1) * q], &mut params.vt[i * q..(i + 1) * q]);
            for (p, g) in v.iter_mut().zip(part.dv(slot)) {
                *p -= lr * (g + reg * config.reg_v * *p);
            }
            if !config.freeze_translations {
                for (p, g) in vt.iter_mut().zip(part.dvt(slot)) {
                    *p -= lr * (g + reg * config.reg_v * *p);
                }
            }
            let finite = params.w[i].is_finite() && v.iter().chain(vt.iter()).all(|x| x.is_finite());
            if !finite {
                return Err(Error::Divergence(format!(
                    "non-finite parameters at column {i}; lower learn_rate"
                )));
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite loss; lower learn_rate".into()));
    }
    Ok(loss)
}

/// Positives of every user in the order training visits them before shuffling.
pub(crate) fn positive_list(pool: &PositivePool, with_sources: bool) -> Vec<(usize, ItemRef)> {
    (0..pool.n_users())
        .flat_map(|u| {
            pool.global(u)
                .into_iter()
                .filter(move |it| with_sources || matches!(it, ItemRef::Target(_)))
                .map(move |it| (u, it))
        })
        .collect()
}

/// Trains the translation-based scorer with BPR and negative sampling.
///
/// `bundle` supplies the sources and the target index space; `train_split`
/// holds the target ratings treated as observed.
pub fn train(
    bundle: &DatasetBundle,
    weights: &[SourceWeights],
    train_split: &RatingMatrix,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainStats)> {
    config.validate()?;
    let builder = FeatureBuilder::new(bundle, weights, config.context_value)?;
    let pool = PositivePool::new(bundle, train_split);
    let n_items = bundle.target.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        builder.index().total_dim(),
        config.q,
        config.freeze_translations,
        &mut rng,
    );
    let mut positives = positive_list(&pool, config.source_positive_ranking);
    let mut stats = TrainStats::default();
    let mut scratch = StepScratch::default();

    for _ in 0..config.epochs {
        positives.shuffle(&mut rng);
        let mut total = 0.0;
        let mut pairs = 0usize;
        for &(u, item) in &positives {
            let available = n_items - pool.target_positives(u).len();
            let count = config.negatives_per_positive.min(available);
            if count == 0 {
                continue;
            }
            let x_pos = builder.vector(u, item)?;
            for j in sample_negatives(u, count, &pool, n_items, &mut rng)? {
                let x_neg = builder.target(u, j)?;
                total += train_step_with(&mut params, &x_pos, &x_neg, config, &mut scratch)?;
                pairs += 1;
            }
        }
        stats
            .epoch_loss
            .push(if pairs > 0 { total / pairs as f64 } else { 0.0 });
        stats.samples += pairs;
    }
    Ok((params, stats))
}

/// Scores every target item not in `exclusions` (ascending) and returns the
/// best `n` by descending score, ties by ascending item index.
pub fn recommend_topn<M: RankingModel + ?Sized>(
    model: &M,
    builder: &FeatureBuilder,
    user: usize,
    n: usize,
    exclusions: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let n_items = builder.index().n_items;
    let mut scored = Vec::with_capacity(n_items);
    for item in 0..n_items {
        if exclusions.binary_search(&item).is_ok() {
            continue;
        }
        scored.push((item, model.score(&builder.target(user, item)?)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureIndex;

    #[test]
    fn bpr_loss_values() {
        assert!((bpr_pair_loss(1.3, 1.3) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bpr_pair_loss(2.0, 0.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
        let tiny = bpr_pair_loss(50.0, 0.0);
        assert!(tiny > 0.0 && tiny < 1e-20);
        assert!((bpr_pair_loss(0.0, 800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn bpr_loss_is_positive_and_decreasing() {
        let mut prev = f64::INFINITY;
        for k in -400..=400 {
            let d = k as f64 * 0.1;
            let l = bpr_pair_loss(d, 0.0);
            assert!(l > 0.0 && l < prev, "at {d}");
            prev = l;
        }
    }

    struct Fixed(Vec<f64>);

    impl RankingModel for Fixed {
        fn score(&self, x: &FeatureVector) -> Result<f64> {
            Ok(self.0[x.item_column() - 1])
        }
    }

    fn builder(n_items: usize) -> FeatureBuilder {
        let target = RatingMatrix::new("t", 1, n_items, vec![]).unwrap();
        let bundle = DatasetBundle::new(target, vec![], vec![]).unwrap();
        let b = FeatureBuilder::new(&bundle, &[], Default::default()).unwrap();
        assert_eq!(b.index(), &FeatureIndex::new(1, n_items, vec![]));
        b
    }

    #[test]
    fn topn_orders_and_excludes() {
        let b = builder(2);
        let top = recommend_topn(&Fixed(vec![0.9, 0.2]), &b, 0, 1, &[]).unwrap();
        assert_eq!(top, vec![(0, 0.9)]);
        let b = builder(4);
        let ties = recommend_topn(&Fixed(vec![1.0; 4]), &b, 0, 10, &[]).unwrap();
        assert_eq!(ties.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let excl = recommend_topn(&Fixed(vec![5.0, 1.0, 2.0, 3.0]), &b, 0, 10, &[0]).unwrap();
        assert_eq!(excl.iter().map(|t| t.0).collect::<Vec<_>>(), vec![3, 2, 1]);
    }
}
