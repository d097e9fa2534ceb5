use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, OverlapMatrix, Rating, RatingMatrix};
use crate::error::{Error, Result};

/// Parameters of the planted-cluster generator. Domain 0 is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub domains: usize,
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub clusters: usize,
    pub overlap_fraction: f64,
    pub noise: f64,
    pub seed: u64,
    /// Ratings drawn per target user.
    pub target_ratings_per_user: usize,
    /// Ratings drawn per source user.
    pub source_ratings_per_user: usize,
    /// Selection weight of high-appeal items relative to low-appeal ones.
    pub appeal_weight: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            domains: 2,
            users_per_domain: 300,
            items_per_domain: 100,
            clusters: 5,
            overlap_fraction: 0.6,
            noise: 0.1,
            seed: 0,
            target_ratings_per_user: 4,
            source_ratings_per_user: 20,
            appeal_weight: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap_fraction must lie in [0, 1], got {}",
                self.overlap_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise must lie in [0, 1], got {}", self.noise)));
        }
        if self.domains == 0 || self.clusters == 0 {
            return Err(Error::Config("domains and clusters must be positive".into()));
        }
        if self.clusters > self.items_per_domain || self.clusters > self.users_per_domain {
            return Err(Error::Config(format!(
                "{} clusters do not fit {} users / {} items",
                self.clusters, self.users_per_domain, self.items_per_domain
            )));
        }
        if !(self.appeal_weight > 0.0) {
            return Err(Error::Config("appeal_weight must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth behind a synthetic bundle, indexed like the bundle's domains
/// (0 = target, then sources in order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub user_cluster: Vec<Vec<usize>>,
    pub item_group: Vec<Vec<usize>>,
    pub high_appeal: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub bundle: DatasetBundle,
    pub truth: PlantedTruth,
}

struct DomainPlan {
    user_cluster: Vec<usize>,
    item_group: Vec<usize>,
    high_appeal: Vec<bool>,
}

fn balanced_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

fn plan_items(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<bool>) {
    let groups = balanced_labels(cfg.items_per_domain, cfg.clusters, rng);
    let appeal = (0..cfg.items_per_domain).map(|_| rng.random_bool(0.5)).collect();
    (groups, appeal)
}

fn draw_ratings(plan: &DomainPlan, per_user: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Rating> {
    let n_items = plan.item_group.len();
    let per_user = per_user.min(n_items);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.clusters];
    for (h, &g) in plan.item_group.iter().enumerate() {
        members[g].push(h);
    }
    let mut out = Vec::new();
    for (user, &c) in plan.user_cluster.iter().enumerate() {
        let mut taken = vec![false; n_items];
        for _ in 0..per_user {
            let noisy = cfg.noise > 0.0 && rng.random_bool(cfg.noise);
            let in_group: Vec<usize> = members[c].iter().copied().filter(|&h| !taken[h]).collect();
            let (item, value) = if noisy || in_group.is_empty() {
                let free: Vec<usize> = (0..n_items).filter(|&h| !taken[h]).collect();
                let item = *free.choose(rng).expect("per_user <= n_items");
                let value = if noisy { rng.random_range(1..=5) as f64 } else { 1.0 };
                (item, value)
            } else {
                let item = *in_group
                    .choose_weighted(rng, |&h| if plan.high_appeal[h] { cfg.appeal_weight } else { 1.0 })
                    .expect("positive weights");
                let value = if plan.high_appeal[item] {
                    rng.random_range(4..=5) as f64
                } else {
                    rng.random_range(2..=3) as f64
                };
                (item, value)
            };
            taken[item] = true;
            out.push(Rating { user, item, value });
        }
    }
    out
}

/// Generates one target and `domains - 1` source domains sharing planted
/// user clusters. Each cluster owns one item group per domain; noiseless
/// ratings fall inside the owner group (4-5 for high-appeal items, 2-3
/// otherwise). With probability `noise` a rating goes to a uniformly random
/// item with a uniform 1-5 value. Overlap pairs align same-cluster users.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SyntheticBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.users_per_domain;

    let target_clusters = balanced_labels(n, cfg.clusters, &mut rng);
    let (groups, appeal) = plan_items(cfg, &mut rng);
    let target_plan = DomainPlan {
        user_cluster: target_clusters,
        item_group: groups,
        high_appeal: appeal,
    };
    let target_entries = draw_ratings(&target_plan, cfg.target_ratings_per_user, cfg, &mut rng);
    let target = RatingMatrix::new("target", n, cfg.items_per_domain, target_entries)?;

    let n_overlap = ((n as f64) * cfg.overlap_fraction).round() as usize;
    let mut plans = vec![target_plan];
    let mut sources = Vec::new();
    let mut overlaps = Vec::new();
    for p in 1..cfg.domains {
        let mut aligned: Vec<usize> = (0..n).collect();
        aligned.shuffle(&mut rng);
        aligned.truncate(n_overlap);
        aligned.sort_unstable();
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(&mut rng);

        let mut user_cluster = vec![0; n];
        let mut pairs = Vec::with_capacity(n_overlap);
        for (slot_pos, &k) in slots.iter().enumerate() {
            if let Some(&u) = aligned.get(slot_pos) {
                user_cluster[k] = plans[0].user_cluster[u];
                pairs.push((k, u));
            } else {
                user_cluster[k] = rng.random_range(0..cfg.clusters);
            }
        }
        let (groups, appeal) = plan_items(cfg, &mut rng);
        let plan = DomainPlan {
            user_cluster,
            item_group: groups,
            high_appeal: appeal,
        };
        let entries = draw_ratings(&plan, cfg.source_ratings_per_user, cfg, &mut rng);
        let name = format!("source_{p}");
        sources.push(RatingMatrix::new(&name, n, cfg.items_per_domain, entries)?);
        overlaps.push(OverlapMatrix::new(&name, pairs, n, n)?);
        plans.push(plan);
    }

    let truth = PlantedTruth {
        user_cluster: plans.iter().map(|p| p.user_cluster.clone()).collect(),
        item_group: plans.iter().map(|p| p.item_group.clone()).collect(),
        high_appeal: plans.into_iter().map(|p| p.high_appeal).collect(),
    };
    Ok(SyntheticBundle {
        bundle: DatasetBundle::new(target, sources, overlaps)?,
        truth,
    })
}
