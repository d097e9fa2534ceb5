use serde::{Deserialize, Serialize};

use super::{ndcg_at_n, recall_at_n, MetricsReport, RunMetrics, UserMetrics};
use crate::coclustering::{run_coclustering, CoclusterConfig, SourceWeights};
use crate::data::{label_relevance, split_target, DatasetBundle, RatingMatrix, RelevanceSets, SplitSpec, TargetSplit};
use crate::deep::{train_deep, DeepConfig, DeepModel};
use crate::error::{Error, Result};
use crate::features::{FeatureBuilder, FeatureVector};
use crate::model::{recommend_topn, train, CdtModel, RankingModel, TrainConfig, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Cdt,
    DeepCdt,
    /// Inner-product factorization machine on the target domain alone.
    FmAblation,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cdt => "cdt",
            ModelKind::DeepCdt => "deep-cdt",
            ModelKind::FmAblation => "fm-ablation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Expected target domain id; checked against the bundle when set.
    pub target_domain: Option<String>,
    /// Source domains to use, by id; all sources when empty.
    pub source_domains: Vec<String>,
    pub n: usize,
    pub runs: usize,
    pub q_grid: Vec<usize>,
    pub model: ModelKind,
    /// Run `r` uses seed `seed + r`.
    pub seed: u64,
    /// Select `q` on the validation split for every run instead of using the
    /// configured value.
    pub tune_q: bool,
    /// Also drop the user's validation items from the test candidates.
    pub exclude_validation: bool,
    pub per_user: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            target_domain: None,
            source_domains: Vec::new(),
            n: 10,
            runs: 5,
            q_grid: (1..=10).map(|k| 10 * k).collect(),
            model: ModelKind::Cdt,
            seed: 0,
            tune_q: false,
            exclude_validation: false,
            per_user: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_grid.is_empty() {
            return Err(Error::Config("q_grid must not be empty".into()));
        }
        if self.q_grid.contains(&0) {
            return Err(Error::Config("q_grid entries must be positive".into()));
        }
        if self.n == 0 || self.runs == 0 {
            return Err(Error::Config("n and runs must be positive".into()));
        }
        Ok(())
    }

    /// Restricts the bundle to the configured domains.
    pub fn select_domains(&self, bundle: &DatasetBundle) -> Result<DatasetBundle> {
        if let Some(t) = &self.target_domain {
            if t != bundle.target.domain_id() {
                return Err(Error::Config(format!(
                    "target domain {t:?} does not match bundle target {:?}",
                    bundle.target.domain_id()
                )));
            }
        }
        if self.source_domains.is_empty() {
            return Ok(bundle.clone());
        }
        let mut sources = Vec::new();
        let mut overlaps = Vec::new();
        for id in &self.source_domains {
            let p = bundle
                .sources
                .iter()
                .position(|s| s.domain_id() == id)
                .ok_or_else(|| Error::Config(format!("unknown source domain {id:?}")))?;
            sources.push(bundle.sources[p].clone());
            overlaps.push(bundle.overlaps[p].clone());
        }
        DatasetBundle::new(bundle.target.clone(), sources, overlaps)
    }
}

/// Module configurations used by every stage of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub split: SplitSpec,
    pub cocluster: CoclusterConfig,
    pub train: TrainConfig,
    pub deep: DeepConfig,
}

impl PipelineSettings {
    /// Copy with every component seed offset by `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.split.seed = s.split.seed.wrapping_add(seed);
        s.cocluster.seed = s.cocluster.seed.wrapping_add(seed);
        s.train.seed = s.train.seed.wrapping_add(seed);
        s.deep.seed = s.deep.seed.wrapping_add(seed);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Cdt(CdtModel),
    Deep(DeepModel),
}

impl RankingModel for TrainedModel {
    fn score(&self, x: &FeatureVector) -> Result<f64> {
        match self {
            TrainedModel::Cdt(m) => m.score(x),
            TrainedModel::Deep(m) => m.score(x),
        }
    }
}

/// Trains `kind` on `bundle` (sources plus the training target) with weights
/// already computed for those sources. The factorization-machine ablation
/// ignores sources and weights.
pub fn fit_model(
    kind: ModelKind,
    bundle: &DatasetBundle,
    weights: &[SourceWeights],
    train_split: &RatingMatrix,
    settings: &PipelineSettings,
) -> Result<(TrainedModel, TrainStats)> {
    match kind {
        ModelKind::Cdt => {
            let (params, stats) = train(bundle, weights, train_split, &settings.train)?;
            let interaction = settings.train.interaction();
            Ok((TrainedModel::Cdt(CdtModel { params, interaction }), stats))
        }
        ModelKind::FmAblation => {
            let cfg = settings.train.clone().fm_ablation();
            let (params, stats) = train(&bundle.target_only(), &[], train_split, &cfg)?;
            let interaction = cfg.interaction();
            Ok((TrainedModel::Cdt(CdtModel { params, interaction }), stats))
        }
        ModelKind::DeepCdt => {
            let (params, mlp, stats) = train_deep(bundle, weights, train_split, &settings.deep, &settings.train)?;
            let index = FeatureBuilder::new(bundle, weights, settings.train.context_value)?
                .index()
                .clone();
            let model = DeepModel {
                params,
                mlp,
                index,
                interaction: settings.train.interaction(),
                add_interaction: settings.deep.add_interaction,
            };
            Ok((TrainedModel::Deep(model), stats))
        }
    }
}

fn user_items(m: &RatingMatrix) -> Vec<Vec<usize>> {
    m.user_rows()
        .into_iter()
        .map(|row| row.into_iter().map(|e| e.0).collect())
        .collect()
}

fn merged(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Ranks all non-excluded items for every user with at least one relevant
/// item and returns the per-user metrics and the number of skipped users.
pub fn evaluate_ranking<M: RankingModel + ?Sized>(
    model: &M,
    builder: &FeatureBuilder,
    relevance: &RelevanceSets,
    exclusions: &[Vec<usize>],
    n: usize,
) -> Result<(Vec<UserMetrics>, usize)> {
    let mut users = Vec::new();
    let mut skipped = 0;
    for (u, relevant) in relevance.relevant.iter().enumerate() {
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let ranked: Vec<usize> = recommend_topn(model, builder, u, n, &exclusions[u])?
            .into_iter()
            .map(|e| e.0)
            .collect();
        users.push(UserMetrics {
            user: u,
            recall: recall_at_n(&ranked, relevant, n).expect("nonempty"),
            ndcg: ndcg_at_n(&ranked, relevant, n).expect("nonempty"),
            relevant: relevant.len(),
        });
    }
    Ok((users, skipped))
}

fn mean_of(users: &[UserMetrics], f: fn(&UserMetrics) -> f64) -> f64 {
    if users.is_empty() {
        0.0
    } else {
        users.iter().map(f).sum::<f64>() / users.len() as f64
    }
}

/// Split, co-clustering weights and model-ready bundle for one run.
struct RunContext {
    split: TargetSplit,
    working: DatasetBundle,
    weights: Vec<SourceWeights>,
}

impl RunContext {
    fn prepare(bundle: &DatasetBundle, kind: ModelKind, settings: &PipelineSettings) -> Result<Self> {
        let split = split_target(&bundle.target, &settings.split)?;
        let working = bundle.with_target(split.train.clone())?;
        let weights = if kind == ModelKind::FmAblation || working.sources.is_empty() {
            Vec::new()
        } else {
            run_coclustering(&working, &settings.cocluster)?.weights()
        };
        let working = if kind == ModelKind::FmAblation {
            working.target_only()
        } else {
            working
        };
        Ok(RunContext {
            split,
            working,
            weights,
        })
    }

    fn builder(&self, settings: &PipelineSettings) -> Result<FeatureBuilder> {
        FeatureBuilder::new(&self.working, &self.weights, settings.train.context_value)
    }

    fn fit(&self, kind: ModelKind, settings: &PipelineSettings) -> Result<TrainedModel> {
        Ok(fit_model(kind, &self.working, &self.weights, &self.split.train, settings)?.0)
    }

    fn validation_search(
        &self,
        kind: ModelKind,
        n: usize,
        grid: &[usize],
        settings: &PipelineSettings,
    ) -> Result<GridSearch> {
        if grid.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if self.split.val.is_empty() {
            return Err(Error::Validation("validation split is empty".into()));
        }
        let relevance = label_relevance(&self.split.val, &self.split.train);
        let exclusions = user_items(&self.split.train);
        let builder = self.builder(settings)?;
        let mut sorted = grid.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut scores = Vec::with_capacity(sorted.len());
        for q in sorted {
            let mut s = settings.clone();
            s.train.q = q;
            let model = self.fit(kind, &s)?;
            let (users, _) = evaluate_ranking(&model, &builder, &relevance, &exclusions, n)?;
            scores.push((q, mean_of(&users, |m| m.recall)));
        }
        let mut best = scores[0];
        for &cand in &scores[1..] {
            if cand.1 > best.1 {
                best = cand;
            }
        }
        Ok(GridSearch {
            best_q: best.0,
            best_recall: best.1,
            scores,
        })
    }
}

/// Outcome of a validation grid over `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_q: usize,
    pub best_recall: f64,
    /// `(q, validation recall@n)` in ascending `q`.
    pub scores: Vec<(usize, f64)>,
}

/// Trains one model per `q` in `grid` on the training split (seeded by
/// `config.seed`) and picks the best validation recall@n; ties go to the
/// smaller `q`.
pub fn grid_search(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
    settings: &PipelineSettings,
    grid: &[usize],
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::Config("grid must not be empty".into()));
    }
    let bundle = config.select_domains(bundle)?;
    let settings = settings.reseeded(config.seed);
    let ctx = RunContext::prepare(&bundle, config.model, &settings)?;
    ctx.validation_search(config.model, config.n, grid, &settings)
}

/// Repeats split, co-clustering, training and evaluation `config.runs`
/// times with seeds `config.seed + r` and averages the metrics.
pub fn run_experiment(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
    settings: &PipelineSettings,
) -> Result<MetricsReport> {
    config.validate()?;
    let bundle = config.select_domains(bundle)?;
    let mut runs = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let seed = config.seed.wrapping_add(r as u64);
        let mut s = settings.reseeded(seed);
        let ctx = RunContext::prepare(&bundle, config.model, &s)?;
        if config.tune_q {
            s.train.q = ctx
                .validation_search(config.model, config.n, &config.q_grid, &s)?
                .best_q;
        }
        let model = ctx.fit(config.model, &s)?;
        let relevance = label_relevance(&ctx.split.test, &ctx.split.train);
        let train_items = user_items(&ctx.split.train);
        let exclusions = if config.exclude_validation {
            let val_items = user_items(&ctx.split.val);
            train_items.iter().zip(&val_items).map(|(a, b)| merged(a, b)).collect()
        } else {
            train_items
        };
        let (users, skipped) = evaluate_ranking(&model, &ctx.builder(&s)?, &relevance, &exclusions, config.n)?;
        runs.push(RunMetrics {
            run: r,
            seed,
            q: s.train.q,
            recall: mean_of(&users, |m| m.recall),
            ndcg: mean_of(&users, |m| m.ndcg),
            users_evaluated: users.len(),
            users_skipped: skipped,
            per_user: config.per_user.then_some(users),
        });
    }
    Ok(MetricsReport::from_runs(config.model, config.n, runs))
}
