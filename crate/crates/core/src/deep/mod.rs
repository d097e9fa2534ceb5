//! Feed-forward extension: pooled translated embeddings feed a rectifier
//! network whose scalar output replaces the pairwise term.

mod adam;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use train::{deep_pair_gradient, deep_pair_objective, train_deep, DeepGradient};

use crate::error::{Error, Result};
use crate::features::{FeatureIndex, FeatureVector, Field};
use crate::model::{score_fast, Interaction, ModelParams, RankingModel};

/// Dense layer, weights row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Rectifier hidden layers followed by a linear scalar head (the last layer).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let head = layers
            .last()
            .ok_or_else(|| Error::Shape("network has no layers".into()))?;
        if head.n_out != 1 {
            return Err(Error::Shape(format!("head has {} outputs, expected 1", head.n_out)));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Shape(format!(
                    "layer {i} buffers do not match {}x{}",
                    l.n_out, l.n_in
                )));
            }
        }
        if let Some(i) = layers.windows(2).position(|w| w[0].n_out != w[1].n_in) {
            return Err(Error::Shape(format!("layers {i} and {} do not chain", i + 1)));
        }
        Ok(MlpParams { layers })
    }

    /// Fan-in scaled normal weights (`sqrt(2 / n_in)` for rectifier layers,
    /// `sqrt(1 / n_in)` for the head), zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, width: usize, depth: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut n_in = input_dim;
        for d in 0..=depth {
            let n_out = if d == depth { 1 } else { width };
            let gain = if d == depth { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / n_in.max(1) as f64).sqrt()).expect("positive std");
            let mut layer = Layer::zeros(n_in, n_out);
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
            layers.push(layer);
            n_in = n_out;
        }
        MlpParams { layers }
    }

    pub fn zeros(input_dim: usize, width: usize, depth: usize) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut n_in = input_dim;
        for d in 0..=depth {
            let n_out = if d == depth { 1 } else { width };
            layers.push(Layer::zeros(n_in, n_out));
            n_in = n_out;
        }
        MlpParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Per-layer outputs: pre-activations of every layer (the last one is the
    /// scalar output) and post-rectifier activations of hidden layers.
    pub(crate) fn forward_cached(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (d, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(post.last().map_or(input, Vec::as_slice));
            if d + 1 < self.layers.len() {
                post.push(z.iter().map(|&v| v.max(0.0)).collect());
            }
            pre.push(z);
        }
        (pre, post)
    }
}

pub fn mlp_forward(mlp: &MlpParams, input: &[f64]) -> Result<f64> {
    if input.len() != mlp.input_dim() {
        return Err(Error::Shape(format!(
            "network expects {} inputs, got {}",
            mlp.input_dim(),
            input.len()
        )));
    }
    let (pre, _) = mlp.forward_cached(input);
    Ok(pre.last().expect("head")[0])
}

/// Field group of a column: 0 user, 1 active item, `2 + p` source `p` context.
pub(crate) fn group_of(index: &FeatureIndex, x: &FeatureVector, column: usize) -> Result<usize> {
    if column == x.item_column() {
        return Ok(1);
    }
    match index.field_of(column) {
        Some(Field::User) => Ok(0),
        Some(Field::Item) => Ok(1),
        Some(Field::Source(p)) => Ok(2 + p),
        None => Err(Error::Range(format!(
            "feature column {column} outside layout of {}",
            index.total_dim()
        ))),
    }
}

/// Concatenates, per field group (user, active item, each source domain),
/// the sum of `x_i * (v_i + v'_i)` over the group's active columns.
pub fn pool_fields(params: &ModelParams, x: &FeatureVector, index: &FeatureIndex) -> Result<Vec<f64>> {
    let q = params.q;
    let mut pooled = vec![0.0; (index.n_sources() + 2) * q];
    for &(i, xi) in x.entries() {
        if i >= params.dim() {
            return Err(Error::Range(format!(
                "feature column {i} outside model dimension {}",
                params.dim()
            )));
        }
        let g = group_of(index, x, i)?;
        let block = &mut pooled[g * q..(g + 1) * q];
        for ((p, v), t) in block.iter_mut().zip(params.embedding(i)).zip(params.translation(i)) {
            *p += xi * (v + t);
        }
    }
    Ok(pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepConfig {
    pub batch_size: usize,
    pub learn_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Add the pairwise translated-distance term next to the network output.
    pub add_interaction: bool,
}

impl Default for DeepConfig {
    fn default() -> Self {
        DeepConfig {
            batch_size: 512,
            learn_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden_width: 64,
            depth: 5,
            epochs: 10,
            seed: 0,
            add_interaction: false,
        }
    }
}

impl DeepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::Config("batch_size and hidden_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config(
                "adam decay rates must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        if !(self.learn_rate >= 0.0) {
            return Err(Error::Config("learn_rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything needed to score with the deep variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepModel {
    pub params: ModelParams,
    pub mlp: MlpParams,
    pub index: FeatureIndex,
    pub interaction: Interaction,
    pub add_interaction: bool,
}

/// `w0 + sum_i w_i x_i + mlp(pool_fields(x))`, plus the pairwise term of the
/// translation scorer when `add_interaction` is set.
pub fn deep_score(model: &DeepModel, x: &FeatureVector) -> Result<f64> {
    let pooled = pool_fields(&model.params, x, &model.index)?;
    let net = mlp_forward(&model.mlp, &pooled)?;
    let base = if model.add_interaction {
        score_fast(&model.params, x, model.interaction)?
    } else {
        model.params.w0 + x.entries().iter().map(|&(i, xi)| model.params.w[i] * xi).sum::<f64>()
    };
    Ok(base + net)
}

impl RankingModel for DeepModel {
    fn score(&self, x: &FeatureVector) -> Result<f64> {
        deep_score(self, x)
    }
}
