//! Translation-based factorization scorer, BPR training and top-n ranking.

mod checkpoint;
mod score;
pub(crate) mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, DeepSection};
pub use score::{accumulate_gradient, score, score_fast, EntryGradient, Interaction, Variant};
pub use train::{
    bpr_pair_loss, pair_gradient, pair_objective, recommend_topn, train, train_step, train_step_with, CdtModel,
    ParamGradient, RankingModel, StepScratch, TrainStats,
};

use crate::error::{Error, Result};
use crate::features::ContextValue;

/// Global bias, linear weights, embeddings and translation vectors for all
/// `l` feature columns. Matrices are row-major `l x q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub q: usize,
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub vt: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(l: usize, q: usize) -> Self {
        ModelParams {
            q,
            w0: 0.0,
            w: vec![0.0; l],
            v: vec![0.0; l * q],
            vt: vec![0.0; l * q],
        }
    }

    /// `w0 = 0`, `w = 0`, embeddings and translations drawn from
    /// `N(0, 0.1 / sqrt(q))`. Translations stay zero when frozen.
    pub fn init<R: Rng + ?Sized>(l: usize, q: usize, freeze_translations: bool, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1 / (q as f64).sqrt()).expect("positive std");
        let mut p = ModelParams::zeros(l, q);
        p.v.iter_mut().for_each(|x| *x = normal.sample(rng));
        if !freeze_translations {
            p.vt.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.v[i * self.q..(i + 1) * self.q]
    }

    pub fn translation(&self, i: usize) -> &[f64] {
        &self.vt[i * self.q..(i + 1) * self.q]
    }

    pub fn embedding_mut(&mut self, i: usize) -> &mut [f64] {
        let q = self.q;
        &mut self.v[i * q..(i + 1) * q]
    }

    pub fn translation_mut(&mut self, i: usize) -> &mut [f64] {
        let q = self.q;
        &mut self.vt[i * q..(i + 1) * q]
    }

    /// `v_i + v'_i`
    pub fn translated(&self, i: usize) -> Vec<f64> {
        self.embedding(i)
            .iter()
            .zip(self.translation(i))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let l = self.w.len();
        if self.q == 0 || self.v.len() != l * self.q || self.vt.len() != l * self.q {
            return Err(Error::Shape(format!(
                "params with l={l}, q={} hold {} embedding and {} translation values",
                self.q,
                self.v.len(),
                self.vt.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.vt.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub q: usize,
    pub learn_rate: f64,
    pub reg_w: f64,
    pub reg_v: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Sign applied to the squared-distance pair term; `-1` makes closer
    /// embeddings score higher.
    pub interaction_sign: f64,
    pub variant: Variant,
    /// Also rank observed source items above unobserved target items.
    pub source_positive_ranking: bool,
    /// Keep translation vectors at zero.
    pub freeze_translations: bool,
    pub context_value: ContextValue,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            q: 10,
            learn_rate: 0.05,
            reg_w: 1e-4,
            reg_v: 1e-4,
            negatives_per_positive: 5,
            epochs: 20,
            seed: 0,
            interaction_sign: -1.0,
            variant: Variant::TranslatedDistance,
            source_positive_ranking: true,
            freeze_translations: false,
            context_value: ContextValue::Weight,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.interaction_sign != 1.0 && self.interaction_sign != -1.0 {
            return Err(Error::Config(format!(
                "interaction_sign must be -1 or +1, got {}",
                self.interaction_sign
            )));
        }
        if !(self.learn_rate >= 0.0) || !(self.reg_w >= 0.0) || !(self.reg_v >= 0.0) {
            return Err(Error::Config(
                "learn_rate and regularization must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn interaction(&self) -> Interaction {
        Interaction {
            variant: self.variant,
            sign: self.interaction_sign,
        }
    }

    /// Classical factorization machine: inner-product pairs, no translations.
    pub fn fm_ablation(self) -> Self {
        TrainConfig {
            variant: Variant::InnerProduct,
            freeze_translations: true,
            interaction_sign: 1.0,
            ..self
        }
    }
}
