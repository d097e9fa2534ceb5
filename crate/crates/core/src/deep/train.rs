use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{deep_score, group_of, pool_fields, Adam, DeepConfig, DeepModel, Layer, MlpParams};
use crate::coclustering::SourceWeights;
use crate::data::{DatasetBundle, RatingMatrix};
use crate::error::{Error, Result};
use crate::features::{sample_negatives, FeatureBuilder, FeatureVector, PositivePool};
use crate::model::train::positive_list;
use crate::model::{accumulate_gradient, bpr_pair_loss, EntryGradient, ModelParams, TrainConfig, TrainStats};

/// Dense gradient over every parameter of a [`DeepModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeepGradient {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub vt: Vec<f64>,
    /// Same shapes as the network layers.
    pub layers: Vec<Layer>,
}

impl DeepGradient {
    pub fn zeros(params: &ModelParams, mlp: &MlpParams) -> Self {
        DeepGradient {
            w0: 0.0,
            w: vec![0.0; params.w.len()],
            v: vec![0.0; params.v.len()],
            vt: vec![0.0; params.vt.len()],
            layers: mlp.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    fn clear(&mut self) {
        self.w0 = 0.0;
        for buf in [&mut self.w, &mut self.v, &mut self.vt] {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g = 0.0);
        }
    }
}

/// Backpropagates `scale` from the network output to its input, adding the
/// weight gradients into `acc`.
fn mlp_backward(mlp: &MlpParams, input: &[f64], scale: f64, acc: &mut [Layer]) -> Vec<f64> {
    let (pre, post) = mlp.forward_cached(input);
    let mut delta = vec![scale];
    for d in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[d];
        if d + 1 < mlp.layers.len() {
            for (g, z) in delta.iter_mut().zip(&pre[d]) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let below: &[f64] = if d == 0 { input } else { &post[d - 1] };
        let grad = &mut acc[d];
        let mut next = vec![0.0; layer.n_in];
        for (o, &g) in delta.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * layer.n_in;
            for (k, &a) in below.iter().enumerate() {
                grad.weights[row + k] += g * a;
                next[k] += g * layer.weights[row + k];
            }
        }
        delta = next;
    }
    delta
}

/// Adds `scale * d deep_score(x) / d theta` into `acc`.
fn accumulate_score(model: &DeepModel, x: &FeatureVector, scale: f64, acc: &mut DeepGradient) -> Result<()> {
    let q = model.params.q;
    if model.add_interaction {
        let mut slots = EntryGradient::zeros(x.len(), q);
        acc.w0 += accumulate_gradient(&model.params, x, model.interaction, scale, &mut slots);
        for (slot, &(i, _)) in x.entries().iter().enumerate() {
            acc.w[i] += slots.dw[slot];
            acc.v[i * q..(i + 1) * q]
                .iter_mut()
                .zip(slots.dv(slot))
                .for_each(|(a, g)| *a += g);
            acc.vt[i * q..(i + 1) * q]
                .iter_mut()
                .zip(slots.dvt(slot))
                .for_each(|(a, g)| *a += g);
        }
    } else {
        acc.w0 += scale;
        for &(i, xi) in x.entries() {
            acc.w[i] += scale * xi;
        }
    }
    let pooled = pool_fields(&model.params, x, &model.index)?;
    let dpool = mlp_backward(&model.mlp, &pooled, scale, &mut acc.layers);
    for &(i, xi) in x.entries() {
        let g = group_of(&model.index, x, i)?;
        let block = &dpool[g * q..(g + 1) * q];
        for (c, &b) in block.iter().enumerate() {
            acc.v[i * q + c] += xi * b;
            acc.vt[i * q + c] += xi * b;
        }
    }
    Ok(())
}

fn touched(x_pos: &FeatureVector, x_neg: &FeatureVector) -> Vec<usize> {
    let mut cols: Vec<usize> = x_pos.entries().iter().chain(x_neg.entries()).map(|e| e.0).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// BPR loss of the pair under [`deep_score`] plus the same per-column L2
/// terms as the translation scorer. Network weights are not regularized.
pub fn deep_pair_objective(
    model: &DeepModel,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
) -> Result<f64> {
    let loss = bpr_pair_loss(deep_score(model, x_pos)?, deep_score(model, x_neg)?);
    let p = &model.params;
    let mut reg = 0.0;
    for i in touched(x_pos, x_neg) {
        reg += 0.5 * config.reg_w * p.w[i] * p.w[i];
        reg += 0.5 * config.reg_v * p.embedding(i).iter().map(|x| x * x).sum::<f64>();
        if !config.freeze_translations {
            reg += 0.5 * config.reg_v * p.translation(i).iter().map(|x| x * x).sum::<f64>();
        }
    }
    Ok(loss + reg)
}

/// Adds `scale` times the gradient of [`deep_pair_objective`] into `acc` and
/// returns the pair's BPR loss.
fn accumulate_pair(
    model: &DeepModel,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
    scale: f64,
    acc: &mut DeepGradient,
) -> Result<f64> {
    let s_pos = deep_score(model, x_pos)?;
    let s_neg = deep_score(model, x_neg)?;
    let diff = s_pos - s_neg;
    let loss = bpr_pair_loss(s_pos, s_neg);
    // d loss / d diff = -sigmoid(-diff)
    let outer = -0.5 * (1.0 + (-0.5 * diff).tanh());
    accumulate_score(model, x_pos, scale * outer, acc)?;
    accumulate_score(model, x_neg, -scale * outer, acc)?;

    let q = model.params.q;
    for i in touched(x_pos, x_neg) {
        acc.w[i] += scale * config.reg_w * model.params.w[i];
        let span = i * q..(i + 1) * q;
        acc.v[span.clone()]
            .iter_mut()
            .zip(model.params.embedding(i))
            .for_each(|(g, v)| *g += scale * config.reg_v * v);
        if config.freeze_translations {
            acc.vt[span].iter_mut().for_each(|g| *g = 0.0);
        } else {
            acc.vt[span]
                .iter_mut()
                .zip(model.params.translation(i))
                .for_each(|(g, v)| *g += scale * config.reg_v * v);
        }
    }
    Ok(loss)
}

/// BPR loss of the pair and the dense gradient of [`deep_pair_objective`].
pub fn deep_pair_gradient(
    model: &DeepModel,
    x_pos: &FeatureVector,
    x_neg: &FeatureVector,
    config: &TrainConfig,
) -> Result<(f64, DeepGradient)> {
    let mut acc = DeepGradient::zeros(&model.params, &model.mlp);
    let loss = accumulate_pair(model, x_pos, x_neg, config, 1.0, &mut acc)?;
    Ok((loss, acc))
}

struct Optimizer {
    w0: Adam,
    w: Adam,
    v: Adam,
    vt: Adam,
    layers: Vec<(Adam, Adam)>,
    t: u64,
}

impl Optimizer {
    fn new(params: &ModelParams, mlp: &MlpParams) -> Self {
        Optimizer {
            w0: Adam::new(1),
            w: Adam::new(params.w.len()),
            v: Adam::new(params.v.len()),
            vt: Adam::new(params.vt.len()),
            layers: mlp
                .layers
                .iter()
                .map(|l| (Adam::new(l.weights.len()), Adam::new(l.bias.len())))
                .collect(),
            t: 0,
        }
    }

    fn apply(&mut self, model: &mut DeepModel, grad: &DeepGradient, cfg: &DeepConfig, freeze: bool) {
        self.t += 1;
        let (lr, b1, b2, eps, t) = (cfg.learn_rate, cfg.beta1, cfg.beta2, cfg.epsilon, self.t);
        let p = &mut model.params;
        let mut w0 = [p.w0];
        self.w0.step(&mut w0, &[grad.w0], lr, b1, b2, eps, t);
        p.w0 = w0[0];
        self.w.step(&mut p.w, &grad.w, lr, b1, b2, eps, t);
        self.v.step(&mut p.v, &grad.v, lr, b1, b2, eps, t);
        if !freeze {
            self.vt.step(&mut p.vt, &grad.vt, lr, b1, b2, eps, t);
        }
        for ((layer, g), (aw, ab)) in model.mlp.layers.iter_mut().zip(&grad.layers).zip(&mut self.layers) {
            aw.step(&mut layer.weights, &g.weights, lr, b1, b2, eps, t);
            ab.step(&mut layer.bias, &g.bias, lr, b1, b2, eps, t);
        }
    }
}

/// Trains embeddings, translations and the network jointly with mini-batch
/// BPR and adaptive-moment updates.
///
/// `deep` supplies the optimizer, network shape, epochs and seed;
/// `train_config` supplies `q`, regularization, negatives per positive, the
/// context mode and the pairwise term used when `add_interaction` is set.
pub fn train_deep(
    bundle: &DatasetBundle,
    weights: &[SourceWeights],
    train_split: &RatingMatrix,
    deep: &DeepConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, MlpParams, TrainStats)> {
    deep.validate()?;
    train_config.validate()?;
    let builder = FeatureBuilder::new(bundle, weights, train_config.context_value)?;
    let pool = PositivePool::new(bundle, train_split);
    let index = builder.index().clone();
    let n_items = bundle.target.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(deep.seed);
    let params = ModelParams::init(
        index.total_dim(),
        train_config.q,
        train_config.freeze_translations,
        &mut rng,
    );
    let mlp = MlpParams::init(
        (index.n_sources() + 2) * train_config.q,
        deep.hidden_width,
        deep.depth,
        &mut rng,
    );
    let mut model = DeepModel {
        params,
        mlp,
        index,
        interaction: train_config.interaction(),
        add_interaction: deep.add_interaction,
    };
    let mut opt = Optimizer::new(&model.params, &model.mlp);
    let mut acc = DeepGradient::zeros(&model.params, &model.mlp);
    let mut positives = positive_list(&pool, train_config.source_positive_ranking);
    let mut stats = TrainStats::default();

    for _ in 0..deep.epochs {
        positives.shuffle(&mut rng);
        let mut pairs = Vec::new();
        for &(u, item) in &positives {
            let available = n_items - pool.target_positives(u).len();
            let count = train_config.negatives_per_positive.min(available);
            for j in sample_negatives(u, count, &pool, n_items, &mut rng)? {
                pairs.push((u, item, j));
            }
        }
        let mut total = 0.0;
        for batch in pairs.chunks(deep.batch_size) {
            acc.clear();
            let scale = 1.0 / batch.len() as f64;
            for &(u, item, j) in batch {
                let x_pos = builder.vector(u, item)?;
                let x_neg = builder.target(u, j)?;
                total += accumulate_pair(&model, &x_pos, &x_neg, train_config, scale, &mut acc)?;
            }
            opt.apply(&mut model, &acc, deep, train_config.freeze_translations);
            if !total.is_finite() || !model.params.is_finite() || !model.mlp.is_finite() {
                return Err(Error::Divergence(
                    "non-finite loss or parameters; lower learn_rate".into(),
                ));
            }
        }
        stats.epoch_loss.push(if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        });
        stats.samples += pairs.len();
    }
    Ok((model.params, model.mlp, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureIndex;
    use crate::model::Interaction;

    fn tiny(seed: u64, add_interaction: bool) -> DeepModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index = FeatureIndex::new(3, 4, vec![5]);
        let mut params = ModelParams::init(index.total_dim(), 3, false, &mut rng);
        params.w0 = 0.1;
        let mlp = MlpParams::init(9, 4, 2, &mut rng);
        DeepModel {
            params,
            mlp,
            index,
            interaction: Interaction::distance(-1.0),
            add_interaction,
        }
    }

    fn objective_fd(
        model: &mut DeepModel,
        xp: &FeatureVector,
        xn: &FeatureVector,
        cfg: &TrainConfig,
        get: impl Fn(&mut DeepModel) -> &mut f64,
    ) -> f64 {
        let h = 1e-6;
        let orig = *get(model);
        *get(model) = orig + h;
        let up = deep_pair_objective(model, xp, xn, cfg).unwrap();
        *get(model) = orig - h;
        let down = deep_pair_objective(model, xp, xn, cfg).unwrap();
        *get(model) = orig;
        (up - down) / (2.0 * h)
    }

    #[test]
    fn spot_check_against_differences() {
        let cfg = TrainConfig {
            reg_w: 0.01,
            reg_v: 0.02,
            ..TrainConfig::default()
        };
        for add in [false, true] {
            let mut m = tiny(7, add);
            let xp = FeatureVector::new(vec![(1, 1.0), (4, 1.0), (8, 0.7), (10, 0.2)], 1, 4).unwrap();
            let xn = FeatureVector::new(vec![(1, 1.0), (6, 1.0), (8, 0.7), (10, 0.2)], 1, 6).unwrap();
            let (_, g) = deep_pair_gradient(&m, &xp, &xn, &cfg).unwrap();
            let checks: Vec<(f64, f64)> = vec![
                (g.w0, objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.params.w0)),
                (g.w[8], objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.params.w[8])),
                (
                    g.v[4 * 3 + 1],
                    objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.params.v[13]),
                ),
                (
                    g.vt[10 * 3 + 2],
                    objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.params.vt[32]),
                ),
                (
                    g.layers[0].weights[5],
                    objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.mlp.layers[0].weights[5]),
                ),
                (
                    g.layers[2].bias[0],
                    objective_fd(&mut m, &xp, &xn, &cfg, |m| &mut m.mlp.layers[2].bias[0]),
                ),
            ];
            for (a, n) in checks {
                assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn untouched_columns_have_zero_gradient() {
        let m = tiny(3, false);
        let xp = FeatureVector::new(vec![(0, 1.0), (3, 1.0)], 0, 3).unwrap();
        let xn = FeatureVector::new(vec![(0, 1.0), (5, 1.0)], 0, 5).unwrap();
        let (_, g) = deep_pair_gradient(&m, &xp, &xn, &TrainConfig::default()).unwrap();
        for i in [1, 2, 4, 6, 7, 8, 9, 10, 11] {
            assert_eq!(g.w[i], 0.0);
            assert!(g.v[i * 3..i * 3 + 3].iter().all(|&x| x == 0.0));
        }
    }
}
