use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Pairwise interaction used by the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `sign * ||v_i + v'_i - v_h||^2`
    #[default]
    TranslatedDistance,
    /// `<v_i + v'_i, v_h>`; reduces to the classical FM pair term when the
    /// translations are zero.
    InnerProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub variant: Variant,
    /// Only used by [`Variant::TranslatedDistance`].
    pub sign: f64,
}

impl Interaction {
    pub fn distance(sign: f64) -> Self {
        Interaction {
            variant: Variant::TranslatedDistance,
            sign,
        }
    }

    pub fn inner_product() -> Self {
        Interaction {
            variant: Variant::InnerProduct,
            sign: 1.0,
        }
    }
}

fn check(params: &ModelParams, x: &FeatureVector) -> Result<()> {
    match x.max_column() {
        Some(c) if c >= params.dim() => Err(Error::Range(format!(
            "feature column {c} outside model dimension {}",
            params.dim()
        ))),
        _ => Ok(()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linear(params: &ModelParams, x: &FeatureVector) -> f64 {
    params.w0 + x.entries().iter().map(|&(i, xi)| params.w[i] * xi).sum::<f64>()
}

/// Reference scorer: the double loop over ordered active pairs, with the
/// translation applied to the lower column of each pair.
pub fn score(params: &ModelParams, x: &FeatureVector, interaction: Interaction) -> Result<f64> {
    check(params, x)?;
    let e = x.entries();
    let mut pairs = 0.0;
    for (a, &(i, xi)) in e.iter().enumerate() {
        let ai = params.translated(i);
        for &(h, xh) in &e[a + 1..] {
            let vh = params.embedding(h);
            let term = match interaction.variant {
                Variant::TranslatedDistance => {
                    interaction.sign * ai.iter().zip(vh).map(|(p, r)| (p - r) * (p - r)).sum::<f64>()
                }
                Variant::InnerProduct => dot(&ai, vh),
            };
            pairs += term * xi * xh;
        }
    }
    Ok(linear(params, x) + pairs)
}

/// `O(kq)` scorer using `||a - b||^2 = ||a||^2 + ||b||^2 - 2<a, b>` and
/// suffix sums over the active entries.
pub fn score_fast(params: &ModelParams, x: &FeatureVector, interaction: Interaction) -> Result<f64> {
    check(params, x)?;
    let q = params.q;
    let mut suffix_x = 0.0;
    let mut suffix_norm = 0.0;
    let mut suffix_v = vec![0.0; q];
    let mut pairs = 0.0;
    let mut ai = vec![0.0; q];
    for &(i, xi) in x.entries().iter().rev() {
        let vi = params.embedding(i);
        for ((a, v), t) in ai.iter_mut().zip(vi).zip(params.translation(i)) {
            *a = v + t;
        }
        let cross = dot(&ai, &suffix_v);
        pairs += xi
            * match interaction.variant {
                Variant::TranslatedDistance => {
                    interaction.sign * (dot(&ai, &ai) * suffix_x - 2.0 * cross + suffix_norm)
                }
                Variant::InnerProduct => cross,
            };
        suffix_x += xi;
        suffix_norm += xi * dot(vi, vi);
        suffix_v.iter_mut().zip(vi).for_each(|(s, v)| *s += xi * v);
    }
    Ok(linear(params, x) + pairs)
}

/// Per-entry gradient buffers for one feature vector: `dw` has one value
/// per active entry, `dv` and `dvt` are flat `k x q`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryGradient {
    q: usize,
    pub dw: Vec<f64>,
    pub dv: Vec<f64>,
    pub dvt: Vec<f64>,
    translated: Vec<f64>,
    running: Vec<f64>,
}

impl EntryGradient {
    pub fn zeros(k: usize, q: usize) -> Self {
        let mut g = EntryGradient::default();
        g.reset(k, q);
        g
    }

    /// Zeroes and resizes the buffers for `k` entries, keeping allocations.
    pub fn reset(&mut self, k: usize, q: usize) {
        self.q = q;
        for (buf, len) in [(&mut self.dw, k), (&mut self.dv, k * q), (&mut self.dvt, k * q)] {
            buf.clear();
            buf.resize(len, 0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.dw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dw.is_empty()
    }

    pub fn dv(&self, slot: usize) -> &[f64] {
        &self.dv[slot * self.q..(slot + 1) * self.q]
    }

    pub fn dvt(&self, slot: usize) -> &[f64] {
        &self.dvt[slot * self.q..(slot + 1) * self.q]
    }
}

/// Adds `scale * d score / d theta` for every parameter touched by `x` into
/// `grad`, whose slots follow the entries of `x`. Returns the `w0`
/// derivative (`scale`).
pub fn accumulate_gradient(
    params: &ModelParams,
    x: &FeatureVector,
    interaction: Interaction,
    scale: f64,
    grad: &mut EntryGradient,
) -> f64 {
    let q = params.q;
    let e = x.entries();
    if grad.q != q || grad.len() != e.len() {
        grad.reset(e.len(), q);
    }
    let EntryGradient {
        dw,
        dv,
        dvt,
        translated,
        running,
        ..
    } = grad;
    translated.clear();
    for &(i, _) in e {
        translated.extend(
            params
                .embedding(i)
                .iter()
                .zip(params.translation(i))
                .map(|(v, t)| v + t),
        );
    }
    running.clear();
    running.resize(q, 0.0);

    // First member of each pair: derivative w.r.t. a_i = v_i + v'_i.
    let mut suffix_x = 0.0;
    for (slot, &(i, xi)) in e.iter().enumerate().rev() {
        let ai = &translated[slot * q..(slot + 1) * q];
        dw[slot] += scale * xi;
        let (gv, gt) = (&mut dv[slot * q..(slot + 1) * q], &mut dvt[slot * q..(slot + 1) * q]);
        for c in 0..q {
            let d = match interaction.variant {
                Variant::TranslatedDistance => interaction.sign * 2.0 * xi * (ai[c] * suffix_x - running[c]),
                Variant::InnerProduct => xi * running[c],
            };
            gv[c] += scale * d;
            gt[c] += scale * d;
        }
        suffix_x += xi;
        running
            .iter_mut()
            .zip(params.embedding(i))
            .for_each(|(s, v)| *s += xi * v);
    }

    // Second member of each pair: derivative w.r.t. v_h.
    let mut prefix_x = 0.0;
    running.iter_mut().for_each(|s| *s = 0.0);
    for (slot, &(h, xh)) in e.iter().enumerate() {
        let vh = params.embedding(h);
        let gv = &mut dv[slot * q..(slot + 1) * q];
        for c in 0..q {
            let d = match interaction.variant {
                Variant::TranslatedDistance => -interaction.sign * 2.0 * xh * (running[c] - vh[c] * prefix_x),
                Variant::InnerProduct => xh * running[c],
            };
            gv[c] += scale * d;
        }
        prefix_x += xh;
        running
            .iter_mut()
            .zip(&translated[slot * q..(slot + 1) * q])
            .for_each(|(s, a)| *s += xh * a);
    }
    scale
}
