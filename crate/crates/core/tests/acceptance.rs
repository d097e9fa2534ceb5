//! Acceptance criteria, run in order by a single test so that timings are
//! not distorted by concurrent tests. Each criterion prints one line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdt_core::coclustering::{
    penalized_objective, run_coclustering, solve_cocluster, ClusterAssignment, CoclusterConfig,
};
use cdt_core::data::{split_target, synth_generate, DatasetBundle, OverlapMatrix, SynthConfig, SyntheticBundle};
use cdt_core::deep::{deep_pair_gradient, deep_pair_objective, train_deep, DeepConfig, DeepModel, MlpParams};
use cdt_core::eval::{ndcg_at_n, recall_at_n, run_experiment, ExperimentConfig, ModelKind, PipelineSettings};
use cdt_core::features::{FeatureIndex, FeatureVector};
use cdt_core::model::{
    pair_gradient, pair_objective, score, score_fast, train, Interaction, ModelParams, TrainConfig, Variant,
};

type Outcome = (bool, String);

/// Relative error with the denominator floored at 1e-5, so that partials
/// which are exactly zero compare against central-difference roundoff
/// (about 1e-10 here) without dividing by zero.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn random_entries(rng: &mut ChaCha8Rng, l: usize, k: usize) -> Vec<(usize, f64)> {
    let mut cols: Vec<usize> = rand::seq::index::sample(rng, l, k).into_vec();
    cols.sort_unstable();
    cols.into_iter().map(|c| (c, rng.random_range(0.1..1.5))).collect()
}

fn random_params(rng: &mut ChaCha8Rng, l: usize, q: usize) -> ModelParams {
    let mut p = ModelParams::zeros(l, q);
    p.w0 = rng.random_range(-1.0..1.0);
    for x in p.w.iter_mut().chain(p.v.iter_mut()).chain(p.vt.iter_mut()) {
        *x = rng.random_range(-0.7..0.7);
    }
    p
}

/// Central difference of `f` in the parameter selected by `slot`.
fn central<T>(state: &mut T, slot: impl Fn(&mut T) -> &mut f64, f: impl Fn(&T) -> f64) -> f64 {
    let h = 1e-5;
    let orig = *slot(state);
    *slot(state) = orig + h;
    let up = f(state);
    *slot(state) = orig - h;
    let down = f(state);
    *slot(state) = orig;
    (up - down) / (2.0 * h)
}

fn criterion_1() -> Outcome {
    let (l, q) = (20, 4);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let mut params = random_params(&mut rng, l, q);
        let kp = rng.random_range(2..8);
        let kn = rng.random_range(2..8);
        let xp = FeatureVector::from_entries(random_entries(&mut rng, l, kp)).unwrap();
        let xn = FeatureVector::from_entries(random_entries(&mut rng, l, kn)).unwrap();
        let cfg = TrainConfig {
            q,
            reg_w: 0.01,
            reg_v: 0.02,
            interaction_sign: if inst % 2 == 0 { -1.0 } else { 1.0 },
            variant: if inst % 5 == 4 {
                Variant::InnerProduct
            } else {
                Variant::TranslatedDistance
            },
            ..TrainConfig::default()
        };
        let (_, g) = pair_gradient(&params, &xp, &xn, &cfg).unwrap();
        let mut dense_w = vec![0.0; l];
        let mut dense_v = vec![0.0; l * q];
        let mut dense_vt = vec![0.0; l * q];
        for (&c, (dw, dv, dvt)) in g.columns.iter().zip(&g.slots) {
            dense_w[c] = *dw;
            dense_v[c * q..(c + 1) * q].copy_from_slice(dv);
            dense_vt[c * q..(c + 1) * q].copy_from_slice(dvt);
        }
        let f = |p: &ModelParams| pair_objective(p, &xp, &xn, &cfg).unwrap();
        let mut check = |a: f64, n: f64| {
            worst = worst.max(rel_err(a, n));
            checked += 1;
        };
        check(g.w0, central(&mut params, |p| &mut p.w0, f));
        for (i, &d) in dense_w.iter().enumerate() {
            check(d, central(&mut params, |p| &mut p.w[i], f));
        }
        for j in 0..l * q {
            check(dense_v[j], central(&mut params, |p| &mut p.v[j], f));
            check(dense_vt[j], central(&mut params, |p| &mut p.vt[j], f));
        }
    }
    (
        worst < 1e-4,
        format!("{checked} partials, max relative error {worst:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let q = 3;
    let index = FeatureIndex::new(4, 6, vec![5, 5]);
    let l = index.total_dim();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let cfg = TrainConfig {
        q,
        reg_w: 0.01,
        reg_v: 0.02,
        ..TrainConfig::default()
    };
    for inst in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + inst);
        let params = random_params(&mut rng, l, q);
        let mut mlp = MlpParams::init((index.n_sources() + 2) * q, 4, 2, &mut rng);
        // nonzero biases keep pre-activations off the rectifier kink
        for b in mlp.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
            *b = rng.random_range(-0.3..0.3);
        }
        let mut model = DeepModel {
            params,
            mlp,
            index: index.clone(),
            interaction: Interaction::distance(-1.0),
            add_interaction: inst % 2 == 1,
        };
        let u = rng.random_range(0..4);
        let context: Vec<(usize, f64)> = random_entries(&mut rng, 10, 4)
            .into_iter()
            .map(|(c, x)| (index.source_block(0).start + c, x))
            .collect();
        let vector = |item: usize| {
            let mut e = vec![(index.user_column(u), 1.0), (index.item_column(item), 1.0)];
            e.extend_from_slice(&context);
            FeatureVector::new(e, u, index.item_column(item)).unwrap()
        };
        let xp = vector(rng.random_range(0..3));
        let xn = vector(rng.random_range(3..6));
        let (_, g) = deep_pair_gradient(&model, &xp, &xn, &cfg).unwrap();
        let f = |m: &DeepModel| deep_pair_objective(m, &xp, &xn, &cfg).unwrap();
        let mut check = |a: f64, n: f64| {
            worst = worst.max(rel_err(a, n));
            checked += 1;
        };
        check(g.w0, central(&mut model, |m| &mut m.params.w0, f));
        for i in 0..l {
            check(g.w[i], central(&mut model, |m| &mut m.params.w[i], f));
        }
        for j in 0..l * q {
            check(g.v[j], central(&mut model, |m| &mut m.params.v[j], f));
            check(g.vt[j], central(&mut model, |m| &mut m.params.vt[j], f));
        }
        for d in 0..model.mlp.layers.len() {
            for j in 0..model.mlp.layers[d].weights.len() {
                check(
                    g.layers[d].weights[j],
                    central(&mut model, |m| &mut m.mlp.layers[d].weights[j], f),
                );
            }
            for j in 0..model.mlp.layers[d].bias.len() {
                check(
                    g.layers[d].bias[j],
                    central(&mut model, |m| &mut m.mlp.layers[d].bias[j], f),
                );
            }
        }
    }
    (
        worst < 1e-4,
        format!("{checked} partials, max relative error {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + inst);
        let l = rng.random_range(2..60);
        let q = rng.random_range(1..16);
        let params = random_params(&mut rng, l, q);
        let k = rng.random_range(1..=l.min(25));
        let x = FeatureVector::from_entries(random_entries(&mut rng, l, k)).unwrap();
        for inter in [
            Interaction::distance(-1.0),
            Interaction::distance(1.0),
            Interaction::inner_product(),
        ] {
            let d = (score(&params, &x, inter).unwrap() - score_fast(&params, &x, inter).unwrap()).abs();
            worst = worst.max(d);
        }
    }
    (
        worst <= 1e-9,
        format!("1000 instances x 3 interactions, max |difference| {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + inst);
        let l = rng.random_range(2..60);
        let q = rng.random_range(1..16);
        let mut params = random_params(&mut rng, l, q);
        params.vt.iter_mut().for_each(|t| *t = 0.0);
        let k = rng.random_range(1..=l.min(25));
        let x = FeatureVector::from_entries(random_entries(&mut rng, l, k)).unwrap();
        let linear = params.w0 + x.entries().iter().map(|&(i, xi)| params.w[i] * xi).sum::<f64>();
        let pair = score_fast(&params, &x, Interaction::inner_product()).unwrap() - linear;
        // FM identity: 1/2 sum_f [(sum_i v_if x_i)^2 - sum_i v_if^2 x_i^2]
        let oracle: f64 = (0..q)
            .map(|f| {
                let s: f64 = x.entries().iter().map(|&(i, xi)| params.v[i * q + f] * xi).sum();
                let s2: f64 = x
                    .entries()
                    .iter()
                    .map(|&(i, xi)| (params.v[i * q + f] * xi).powi(2))
                    .sum();
                0.5 * (s * s - s2)
            })
            .sum();
        worst = worst.max((pair - oracle).abs());
    }
    (
        worst <= 1e-9,
        format!("1000 instances, max |pair term - FM oracle| {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut residual_ok = true;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + inst);
        let (np, nt, c) = (30, 25, 4);
        let cp = ClusterAssignment::new("s", c, (0..np).map(|_| rng.random_range(0..c)).collect()).unwrap();
        let ct = ClusterAssignment::new("t", c, (0..nt).map(|_| rng.random_range(0..c)).collect()).unwrap();
        let pairs: Vec<_> = (0..20)
            .map(|_| (rng.random_range(0..np), rng.random_range(0..nt)))
            .collect();
        let o = OverlapMatrix::new("s", pairs, np, nt).unwrap();
        let cfg = CoclusterConfig {
            lambda: rng.random_range(0.0..0.5),
            ortho_penalty: [0.0, 1.0, 1e4][inst as usize % 3],
            max_iters: 200,
            ..CoclusterConfig::default()
        };
        let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
        for w in sim.objective_trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        let last = penalized_objective(&sim.y, &o, &cp, &ct, &cfg).unwrap();
        worst_rise = worst_rise.max(last - sim.objective_trace[0]);
        let gap = sim.y.transpose() * &sim.y - DMatrix::<f64>::identity(c, c);
        residual_ok &= (sim.residuals.orthogonality_residual - gap.norm()).abs() < 1e-9;
    }
    let n = 5;
    let o = OverlapMatrix::new("s", (0..n).map(|i| (i, i)), n, n).unwrap();
    let cfg = CoclusterConfig {
        lambda: 0.0,
        ortho_penalty: 1e-3,
        ..CoclusterConfig::default()
    };
    let sim = solve_cocluster(
        &o,
        &ClusterAssignment::identity("s", n),
        &ClusterAssignment::identity("t", n),
        &cfg,
    )
    .unwrap();
    let dev = (&sim.y - DMatrix::<f64>::identity(n, n)).abs().max();
    let pass = worst_rise <= 1e-8 && dev < 1e-3 && residual_ok;
    (
        pass,
        format!(
            "max per-iteration rise {worst_rise:.2e}, identity deviation {dev:.2e}, orthogonality residual {:.2e} (reported: {residual_ok})",
            sim.residuals.orthogonality_residual
        ),
    )
}

fn criterion_6() -> Outcome {
    let ndcg = ndcg_at_n(&[11, 4, 12, 7], &[11, 12], 10).unwrap();
    let ranked: Vec<usize> = (0..10).collect();
    let recalls = [
        recall_at_n(&ranked, &[1, 3, 5, 20, 21, 22], 10),
        recall_at_n(&ranked, &[30, 31], 10),
        recall_at_n(&ranked, &[2, 8], 10),
    ];
    let pass = (ndcg - 0.9197).abs() <= 1e-4 && recalls == [Some(0.5), Some(0.0), Some(1.0)];
    (pass, format!("ndcg {ndcg:.6}, recalls {recalls:?}"))
}

fn planted(seed: u64) -> SyntheticBundle {
    synth_generate(&SynthConfig::default(), seed).unwrap()
}

/// Shared settings for the desk-scale experiments: co-clustering at the
/// planted cluster count with a strong orthogonality penalty, and the same
/// SGD schedule for both the cross-domain model and the ablation.
fn desk_settings() -> PipelineSettings {
    let mut s = PipelineSettings::default();
    s.cocluster.c_p = 5;
    s.cocluster.c_t = 5;
    s.cocluster.ortho_penalty = 1e4;
    s.train.learn_rate = 0.01;
    s.train.epochs = 40;
    s
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let settings = desk_settings();
    let mut cdt = Vec::new();
    let mut fm = Vec::new();
    for seed in 0..5 {
        let bundle = planted(seed).bundle;
        for (kind, out) in [(ModelKind::Cdt, &mut cdt), (ModelKind::FmAblation, &mut fm)] {
            let cfg = ExperimentConfig {
                model: kind,
                runs: 1,
                seed,
                ..ExperimentConfig::default()
            };
            out.push(run_experiment(&bundle, &cfg, &settings).unwrap().avg_recall);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (c, f) = (mean(&cdt), mean(&fm));
    let elapsed = start.elapsed();
    let pass = c >= 1.1 * f && elapsed < Duration::from_secs(300);
    (
        pass,
        format!(
            "recall@10 cdt {c:.4} vs fm-ablation {f:.4} (ratio {:.3}), {elapsed:.1?}",
            c / f
        ),
    )
}

fn criterion_8() -> Outcome {
    let settings = desk_settings();
    let bundle = planted(0).bundle;
    let split = split_target(&bundle.target, &settings.split).unwrap();
    let working = bundle.with_target(split.train.clone()).unwrap();
    let weights = run_coclustering(&working, &settings.cocluster).unwrap().weights();
    let tc = TrainConfig {
        epochs: 10,
        ..settings.train.clone()
    };
    let (_, cdt) = train(&working, &weights, &split.train, &tc).unwrap();
    let dc = DeepConfig {
        epochs: 10,
        ..DeepConfig::default()
    };
    let (_, _, deep) = train_deep(&working, &weights, &split.train, &dc, &tc).unwrap();
    let (c1, c10) = (cdt.epoch_loss[0], cdt.epoch_loss[9]);
    let (d1, d10) = (deep.epoch_loss[0], deep.epoch_loss[9]);
    (
        c10 < c1 && d10 < d1,
        format!("cdt loss {c1:.4} -> {c10:.4}, deep loss {d1:.5} -> {d10:.5}"),
    )
}

fn criterion_9() -> Outcome {
    let bundle = planted(7).bundle;
    let mut settings = desk_settings();
    settings.train.epochs = 5;
    settings.deep.epochs = 2;
    let mut identical = true;
    let mut detail = Vec::new();
    for kind in [ModelKind::Cdt, ModelKind::DeepCdt, ModelKind::FmAblation] {
        let cfg = ExperimentConfig {
            model: kind,
            runs: 2,
            seed: 3,
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&bundle, &cfg, &settings).unwrap();
        let b = run_experiment(&bundle, &cfg, &settings).unwrap();
        let same = a.to_json().unwrap() == b.to_json().unwrap() && a.to_tsv() == b.to_tsv();
        identical &= same;
        detail.push(format!("{kind} {}", if same { "identical" } else { "differs" }));
    }
    (identical, detail.join(", "))
}

struct Transitivity {
    linked: f64,
    matched_unlinked: f64,
    pooled_unlinked: f64,
}

/// Distances `||v_i + v'_i - v_h||` between target items `i` and source
/// items `h` after training on planted data.
///
/// Linked pairs share a planted cluster but no user co-rated them across the
/// alignment. Each linked pair is compared with the unlinked pairs of the
/// same target item, which keeps per-item norm differences (rarely rated
/// items drift further from everything) out of the comparison. Only items
/// that take part in cross-domain training are considered: target items
/// with a training rating by an aligned user and source items rated by an
/// aligned account.
fn transitivity(seed: u64) -> Transitivity {
    let SyntheticBundle { bundle, truth } = planted(seed);
    let settings = desk_settings().reseeded(seed);
    let split = split_target(&bundle.target, &settings.split).unwrap();
    let working: DatasetBundle = bundle.with_target(split.train.clone()).unwrap();
    let weights = run_coclustering(&working, &settings.cocluster).unwrap().weights();
    let (params, _) = train(&working, &weights, &split.train, &settings.train).unwrap();

    let (n_t, m_t) = (working.target.n_users(), working.target.n_items());
    let m_s = working.sources[0].n_items();
    let index = FeatureIndex::build(&working);
    let mut co = vec![vec![false; m_s]; m_t];
    let aligned = working.overlaps[0].source_users_of(n_t);
    let source_rows = working.sources[0].user_rows();
    for (u, row) in working.target.user_rows().iter().enumerate() {
        for &(i, _) in row {
            for &k in &aligned[u] {
                for &(h, _) in &source_rows[k] {
                    co[i][h] = true;
                }
            }
        }
    }
    let seen_s: Vec<bool> = (0..m_s).map(|h| co.iter().any(|row| row[h])).collect();
    let dist = |i: usize, h: usize| {
        let a = params.translated(index.item_column(i));
        let v = params.embedding(index.source_column(0, h));
        a.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let same = |i: usize, h: usize| truth.item_group[0][i] == truth.item_group[1][h];

    let (mut linked, mut matched, mut n_linked) = (0.0, 0.0, 0usize);
    let (mut pooled, mut n_pooled) = (0.0, 0usize);
    for i in (0..m_t).filter(|&i| co[i].iter().any(|&c| c)) {
        let unlinked: Vec<f64> = (0..m_s)
            .filter(|&h| seen_s[h] && !same(i, h))
            .map(|h| dist(i, h))
            .collect();
        let unlinked_mean = unlinked.iter().sum::<f64>() / unlinked.len() as f64;
        pooled += unlinked.iter().sum::<f64>();
        n_pooled += unlinked.len();
        for h in (0..m_s).filter(|&h| seen_s[h] && same(i, h) && !co[i][h]) {
            linked += dist(i, h);
            matched += unlinked_mean;
            n_linked += 1;
        }
    }
    Transitivity {
        linked: linked / n_linked as f64,
        matched_unlinked: matched / n_linked as f64,
        pooled_unlinked: pooled / n_pooled as f64,
    }
}

fn criterion_10() -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5 {
        let t = transitivity(seed);
        if t.linked < t.matched_unlinked {
            wins += 1;
        }
        detail.push(format!(
            "{:.3}/{:.3} (pooled unlinked {:.3})",
            t.linked, t.matched_unlinked, t.pooled_unlinked
        ));
    }
    (
        wins >= 4,
        format!(
            "linked/unlinked mean distance per seed {}; {wins} of 5",
            detail.join(", ")
        ),
    )
}

/// Name, check and optional time limit in seconds.
type Criterion = (&'static str, fn() -> Outcome, Option<u64>);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 translation-scorer gradients", criterion_1, Some(10)),
        ("2 deep-variant gradients", criterion_2, Some(30)),
        ("3 fast scorer equals pairwise scorer", criterion_3, None),
        ("4 inner-product reduction to FM", criterion_4, None),
        ("5 co-clustering solver properties", criterion_5, None),
        ("6 metric exactness", criterion_6, None),
        ("7 cross-domain lift over ablation", criterion_7, None),
        ("8 training loss decreases", criterion_8, None),
        ("9 determinism", criterion_9, None),
        ("10 transitivity through clusters", criterion_10, None),
    ];
    let mut failed = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let (mut pass, mut detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        if let Some(secs) = limit {
            detail = format!("{detail}, {elapsed:.1?} (limit {secs} s)");
            pass &= elapsed < Duration::from_secs(secs);
        }
        // Written to the raw handle so the line survives libtest's output capture.
        let first = if failed.is_empty() && name.starts_with("1 ") {
            "\n"
        } else {
            ""
        };
        let line = format!(
            "{first}criterion {name}: {} ({detail})\n",
            if pass { "PASS" } else { "FAIL" }
        );
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes())
            .and_then(|()| out.flush())
            .expect("stdout");
        if !pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
