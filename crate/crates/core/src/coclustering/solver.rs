use nalgebra::DMatrix;

use super::{ClusterAssignment, ClusterSimilarity, CoclusterConfig, ConstraintResiduals, GroupAxis};
use crate::data::OverlapMatrix;
use crate::error::{Error, Result};

/// Sufficient statistics of `||O - C_p Y C_t^T||_F^2`: cluster sizes on both
/// sides and overlap-pair counts per cluster pair.
struct FitStats {
    sp: Vec<f64>,
    st: Vec<f64>,
    counts: DMatrix<f64>,
    n_pairs: f64,
}

impl FitStats {
    fn new(o: &OverlapMatrix, cp: &ClusterAssignment, ct: &ClusterAssignment) -> Result<Self> {
        let mut counts = DMatrix::zeros(cp.n_clusters(), ct.n_clusters());
        for &(k, u) in o.pairs() {
            if k >= cp.n_users() || u >= ct.n_users() {
                return Err(Error::Shape(format!(
                    "overlap pair ({k}, {u}) outside assignments of {} and {} users",
                    cp.n_users(),
                    ct.n_users()
                )));
            }
            counts[(cp.cluster_of(k), ct.cluster_of(u))] += 1.0;
        }
        Ok(FitStats {
            sp: cp.sizes().into_iter().map(|s| s as f64).collect(),
            st: ct.sizes().into_iter().map(|s| s as f64).collect(),
            counts,
            n_pairs: o.len() as f64,
        })
    }

    fn check(&self, y: &DMatrix<f64>) -> Result<()> {
        if y.shape() != self.counts.shape() {
            return Err(Error::Shape(format!(
                "Y is {:?}, expected {:?}",
                y.shape(),
                self.counts.shape()
            )));
        }
        Ok(())
    }

    /// `sum_ab sp_a st_b Y_ab^2 - 2 sum_ab N_ab Y_ab + |O|`
    fn reconstruction(&self, y: &DMatrix<f64>) -> f64 {
        let mut total = self.n_pairs;
        for b in 0..y.ncols() {
            for a in 0..y.nrows() {
                let v = y[(a, b)];
                total += self.sp[a] * self.st[b] * v * v - 2.0 * self.counts[(a, b)] * v;
            }
        }
        total
    }

    fn reconstruction_grad(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |a, b| {
            2.0 * (self.sp[a] * self.st[b] * y[(a, b)] - self.counts[(a, b)])
        })
    }

    /// `(C_p^T C_p)^+ C_p^T O C_t (C_t^T C_t)^+`
    fn closed_form(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.counts.nrows(), self.counts.ncols(), |a, b| {
            let size = self.sp[a] * self.st[b];
            if size > 0.0 {
                self.counts[(a, b)] / size
            } else {
                0.0
            }
        })
    }
}

fn ortho_gap(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = y.transpose() * y;
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g
}

fn group_norm(y: &DMatrix<f64>, axis: GroupAxis) -> f64 {
    match axis {
        GroupAxis::Rows => y.row_iter().map(|r| r.norm()).sum(),
        GroupAxis::Columns => y.column_iter().map(|c| c.norm()).sum(),
    }
}

/// `||O - C_p Y C_t^T||_F^2 + lambda * sum of row 2-norms of Y`, with the
/// assignment matrices as 0/1 indicators.
pub fn cocluster_objective(
    y: &DMatrix<f64>,
    o: &OverlapMatrix,
    cp: &ClusterAssignment,
    ct: &ClusterAssignment,
    lambda: f64,
) -> Result<f64> {
    let stats = FitStats::new(o, cp, ct)?;
    stats.check(y)?;
    Ok(stats.reconstruction(y) + lambda * group_norm(y, GroupAxis::Rows))
}

/// The solver's full objective: reconstruction, soft orthogonality penalty
/// and the group-sparsity term along `axis`.
pub fn penalized_objective(
    y: &DMatrix<f64>,
    o: &OverlapMatrix,
    cp: &ClusterAssignment,
    ct: &ClusterAssignment,
    config: &CoclusterConfig,
) -> Result<f64> {
    let stats = FitStats::new(o, cp, ct)?;
    stats.check(y)?;
    Ok(smooth_part(&stats, y, config.ortho_penalty) + config.lambda * group_norm(y, config.group_axis))
}

fn smooth_part(stats: &FitStats, y: &DMatrix<f64>, mu: f64) -> f64 {
    let gap = ortho_gap(y);
    stats.reconstruction(y) + mu * gap.norm_squared()
}

fn smooth_grad(stats: &FitStats, y: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let mut g = stats.reconstruction_grad(y);
    if mu != 0.0 {
        g += (y * ortho_gap(y)) * (4.0 * mu);
    }
    g
}

/// Proximal operator of `threshold * ||.||_{2,1} + indicator(Y >= 0)`:
/// project onto the nonnegative orthant, then shrink each group.
fn prox(z: &DMatrix<f64>, threshold: f64, axis: GroupAxis) -> DMatrix<f64> {
    let mut y = z.map(|x| x.max(0.0));
    match axis {
        GroupAxis::Rows => {
            for mut row in y.row_iter_mut() {
                let norm = row.norm();
                let scale = if norm > threshold { 1.0 - threshold / norm } else { 0.0 };
                row *= scale;
            }
        }
        GroupAxis::Columns => {
            for mut col in y.column_iter_mut() {
                let norm = col.norm();
                let scale = if norm > threshold { 1.0 - threshold / norm } else { 0.0 };
                col *= scale;
            }
        }
    }
    y
}

/// Proximal gradient on the penalized surrogate with backtracking.
///
/// Starts from the clamped closed-form least-squares fit. Each iteration
/// takes a gradient step on reconstruction + `mu * ||Y^T Y - I||_F^2`, then
/// applies the nonnegative group-shrinkage prox. The step starts at
/// `step_size` and is halved until the quadratic upper bound holds, which
/// makes the full objective non-increasing.
pub fn solve_cocluster(
    o: &OverlapMatrix,
    cp: &ClusterAssignment,
    ct: &ClusterAssignment,
    config: &CoclusterConfig,
) -> Result<ClusterSimilarity> {
    config.validate()?;
    let stats = FitStats::new(o, cp, ct)?;
    let mu = config.ortho_penalty;
    let lambda = config.lambda;
    let axis = config.group_axis;

    let mut y = stats.closed_form().map(|x| x.max(0.0));
    let mut smooth = smooth_part(&stats, &y, mu);
    let mut objective = smooth + lambda * group_norm(&y, axis);
    let mut trace = vec![objective];
    let mut step = config.step_size;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let grad = smooth_grad(&stats, &y, mu);
        let accepted = loop {
            let candidate = prox(&(&y - &grad * step), step * lambda, axis);
            let diff = &candidate - &y;
            let cand_smooth = smooth_part(&stats, &candidate, mu);
            if !cand_smooth.is_finite() {
                return Err(Error::Divergence(format!(
                    "co-clustering objective became non-finite at iteration {iterations}; reduce step_size"
                )));
            }
            let bound = smooth + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if cand_smooth <= bound + 1e-12 * smooth.abs().max(1.0) {
                break Some((candidate, cand_smooth));
            }
            step *= 0.5;
            if step < 1e-30 {
                break None;
            }
        };
        let Some((candidate, cand_smooth)) = accepted else {
            break;
        };
        iterations += 1;
        let next = cand_smooth + lambda * group_norm(&candidate, axis);
        if !next.is_finite() {
            return Err(Error::Divergence(format!(
                "co-clustering objective became non-finite at iteration {iterations}; reduce step_size"
            )));
        }
        let change = (objective - next).abs() / objective.abs().max(1e-12);
        y = candidate;
        smooth = cand_smooth;
        objective = next;
        trace.push(objective);
        if change < config.tol {
            break;
        }
        step = (step * 2.0).min(config.step_size);
    }

    let residuals = ConstraintResiduals {
        nonneg_violation: y.iter().fold(0.0f64, |m, &x| m.max(-x)),
        orthogonality_residual: ortho_gap(&y).norm(),
    };
    Ok(ClusterSimilarity {
        y,
        lambda,
        residuals,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense oracle: builds the indicator matrices and evaluates the
    /// Frobenius residual directly.
    fn dense_objective(
        y: &DMatrix<f64>,
        o: &OverlapMatrix,
        cp: &ClusterAssignment,
        ct: &ClusterAssignment,
        lambda: f64,
    ) -> f64 {
        let cpm = DMatrix::from_fn(cp.n_users(), cp.n_clusters(), |k, a| {
            (cp.cluster_of(k) == a) as u8 as f64
        });
        let ctm = DMatrix::from_fn(ct.n_users(), ct.n_clusters(), |u, b| {
            (ct.cluster_of(u) == b) as u8 as f64
        });
        let mut om = DMatrix::zeros(cp.n_users(), ct.n_users());
        for &(k, u) in o.pairs() {
            om[(k, u)] = 1.0;
        }
        let resid = om - &cpm * y * ctm.transpose();
        let l21: f64 = (0..y.nrows())
            .map(|a| y.row(a).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        resid.iter().map(|x| x * x).sum::<f64>() + lambda * l21
    }

    fn identity_case(n: usize) -> (OverlapMatrix, ClusterAssignment, ClusterAssignment) {
        let o = OverlapMatrix::new("s", (0..n).map(|i| (i, i)), n, n).unwrap();
        (
            o,
            ClusterAssignment::identity("s", n),
            ClusterAssignment::identity("t", n),
        )
    }

    fn random_case(seed: u64) -> (OverlapMatrix, ClusterAssignment, ClusterAssignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (np, nt) = (15, 12);
        let cp = ClusterAssignment::new("s", 3, (0..np).map(|_| rng.random_range(0..3)).collect()).unwrap();
        let ct = ClusterAssignment::new("t", 3, (0..nt).map(|_| rng.random_range(0..3)).collect()).unwrap();
        let pairs: Vec<_> = (0..10)
            .map(|_| (rng.random_range(0..np), rng.random_range(0..nt)))
            .collect();
        (OverlapMatrix::new("s", pairs, np, nt).unwrap(), cp, ct)
    }

    #[test]
    fn objective_examples() {
        let (o, cp, ct) = identity_case(3);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(cocluster_objective(&zero, &o, &cp, &ct, 7.0).unwrap(), 3.0);
        let exact = DMatrix::identity(3, 3);
        assert_eq!(cocluster_objective(&exact, &o, &cp, &ct, 0.0).unwrap(), 0.0);

        let (o, cp, ct) = identity_case(1);
        let half = DMatrix::from_element(1, 1, 0.5);
        assert!((cocluster_objective(&half, &o, &cp, &ct, 2.0).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_dense_oracle() {
        for seed in 0..20 {
            let (o, cp, ct) = random_case(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
            let fast = cocluster_objective(&y, &o, &cp, &ct, 0.3).unwrap();
            let slow = dense_objective(&y, &o, &cp, &ct, 0.3);
            assert!((fast - slow).abs() < 1e-10 * slow.max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn identity_overlap_recovers_identity() {
        let (o, cp, ct) = identity_case(4);
        let cfg = CoclusterConfig {
            lambda: 0.0,
            ortho_penalty: 1e-3,
            ..Default::default()
        };
        let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
        assert!((&sim.y - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-3);
        assert!(sim.residuals.orthogonality_residual < 1e-3);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let (o, cp, ct) = random_case(3);
        let cfg = CoclusterConfig {
            lambda: 1e9,
            ortho_penalty: 0.0,
            ..Default::default()
        };
        let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
        assert!(sim.y.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn never_worse_than_initialization() {
        for seed in 0..10 {
            let (o, cp, ct) = random_case(seed);
            let cfg = CoclusterConfig {
                lambda: 0.5,
                ortho_penalty: 0.0,
                ..Default::default()
            };
            let init = FitStats::new(&o, &cp, &ct).unwrap().closed_form();
            let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
            let before = dense_objective(&init, &o, &cp, &ct, 0.5);
            let after = dense_objective(&sim.y, &o, &cp, &ct, 0.5);
            assert!(after <= before + 1e-12, "seed {seed}: {after} > {before}");

            let cfg = CoclusterConfig {
                lambda: 0.5,
                ortho_penalty: 2.0,
                ..Default::default()
            };
            let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
            let before = penalized_objective(&init, &o, &cp, &ct, &cfg).unwrap();
            let after = penalized_objective(&sim.y, &o, &cp, &ct, &cfg).unwrap();
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn trace_is_monotone_and_y_nonnegative() {
        for seed in 0..10 {
            let (o, cp, ct) = random_case(seed);
            for axis in [GroupAxis::Rows, GroupAxis::Columns] {
                let cfg = CoclusterConfig {
                    lambda: 0.2,
                    ortho_penalty: 1.0,
                    step_size: 0.5,
                    group_axis: axis,
                    ..Default::default()
                };
                let sim = solve_cocluster(&o, &cp, &ct, &cfg).unwrap();
                for w in sim.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
                }
                assert!(sim.y.iter().all(|&x| x >= 0.0));
                assert_eq!(sim.residuals.nonneg_violation, 0.0);
            }
        }
    }

    #[test]
    fn empty_clusters_do_not_divide_by_zero() {
        let cp = ClusterAssignment::new("s", 3, vec![0, 0, 1]).unwrap();
        let ct = ClusterAssignment::new("t", 2, vec![0, 0]).unwrap();
        let o = OverlapMatrix::new("s", vec![(0, 0), (2, 1)], 3, 2).unwrap();
        let sim = solve_cocluster(&o, &cp, &ct, &CoclusterConfig::default()).unwrap();
        assert!(sim.y.iter().all(|x| x.is_finite()));
    }
}
