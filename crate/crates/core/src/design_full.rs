//! Enumeration-based solvers for the per-epoch design problems.
//!
//! Every problem has the form `min c^T tau  s.t.  G(tau) <= C`, where the
//! constraint is homogeneous: `G(s lambda) = G(lambda) / sqrt(s)`. The solver
//! optimizes the shape `lambda` on the simplex by Frank-Wolfe with Monte Carlo
//! gradients of `G(lambda)^2 c(lambda)`, then sets the total mass from a fresh
//! estimate of `G(lambda)` so the constraint holds at mean + 3 standard errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwidth::{
    estimate_sup, frank_wolfe, max_norm_gradient, spanning_init, width_gradient, Family, NormalBatch, SupEstimate,
};
use crate::model::{is_binary, support, Allocation, DesignMatrix, FeedbackKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Width term plus the deviation term, regret objective.
    Full,
    /// Width term only, regret objective.
    Relaxed,
    /// Width term only, total-sample objective.
    PureExplore,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantProfile {
    /// Constants from the regret analysis.
    Paper,
    /// The analysis constants multiplied by [`PRACTICAL_FACTOR`].
    #[default]
    Practical,
}

pub const PRACTICAL_FACTOR: f64 = 512.0;

/// `log(2 l^3 / delta)`.
pub fn epoch_log(epoch: u32, delta: f64) -> f64 {
    (2.0 * (epoch as f64).powi(3) / delta).ln()
}

/// Right-hand side of the design constraint in epoch `epoch`.
pub fn constraint_constant(variant: Variant, profile: ConstantProfile, epoch: u32, delta: f64) -> f64 {
    let base = match variant {
        Variant::Full => 1.0 / 128.0,
        Variant::Relaxed | Variant::PureExplore => {
            1.0 / (128.0 * (1.0 + (std::f64::consts::PI * epoch_log(epoch, delta)).sqrt()))
        }
    };
    match profile {
        ConstantProfile::Paper => base,
        ConstantProfile::Practical => base * PRACTICAL_FACTOR,
    }
}

/// One epoch's design problem over an enumerated arm list.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignProblem {
    pub epsilon: f64,
    /// Estimated gaps aligned with the arm list.
    pub gaps: Vec<f64>,
    pub leader: Vec<f64>,
    pub delta: f64,
    pub epoch: u32,
    pub feedback: FeedbackKind,
    pub variant: Variant,
    pub constant: f64,
}

impl DesignProblem {
    fn validate(&self, arms: &[Vec<f64>]) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.constant > 0.0) {
            return Err(Error::InvalidInput(format!("constraint constant {} must be positive", self.constant)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        if self.epoch == 0 {
            return Err(Error::InvalidInput("epochs are numbered from 1".into()));
        }
        if arms.is_empty() || self.gaps.len() != arms.len() {
            return Err(Error::InvalidInput("one gap per arm required".into()));
        }
        if self.gaps.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidInput("gaps must be finite and nonnegative".into()));
        }
        if self.leader.len() != arms[0].len() {
            return Err(Error::InvalidInput("leader dimension mismatch".into()));
        }
        Ok(())
    }

    /// Per-arm objective coefficients.
    pub fn costs(&self) -> Vec<f64> {
        match self.variant {
            Variant::PureExplore => vec![1.0; self.gaps.len()],
            Variant::Full | Variant::Relaxed => self.gaps.iter().map(|g| 2.0 * (self.epsilon + g)).collect(),
        }
    }

    fn family(&self, arms: &[Vec<f64>]) -> Result<Family> {
        Family::scaled_differences(&self.leader, arms, self.epsilon, &self.gaps)
    }

    fn norm_family(&self, arms: &[Vec<f64>]) -> Result<Family> {
        Family::new(arms.to_vec(), self.gaps.iter().map(|g| self.epsilon + g).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Frank-Wolfe iterations on the shape.
    pub fw_iters: usize,
    /// Normal vectors per Monte Carlo batch.
    pub mc_samples: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { fw_iters: 200, mc_samples: 500 }
    }
}

/// An allocation with its objective and constraint value. `feasible` means the
/// constraint, re-estimated on a fresh batch, satisfies mean + 3 std_err <= C.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignSolution {
    pub allocation: Allocation,
    pub objective: f64,
    /// Width term of the constraint at `allocation`.
    pub constraint: SupEstimate,
    /// Deviation term at `allocation` (zero except for the full variant).
    pub deviation: f64,
    pub feasible: bool,
}

impl DesignSolution {
    /// Upper confidence value of the whole constraint.
    pub fn constraint_upper(&self) -> f64 {
        self.constraint.upper() + self.deviation
    }
}

/// Constraint value at unit mass for shape `lambda`: width estimate and
/// deviation term (the latter zero unless `full`).
fn unit_constraint(
    problem: &DesignProblem,
    arms: &[Vec<f64>],
    lambda: &[f64],
    batch: &NormalBatch,
) -> Result<(SupEstimate, f64)> {
    let design = DesignMatrix::accumulate(
        batch.dim(),
        problem.feedback,
        arms.iter().map(|a| a.as_slice()).zip(lambda.iter().copied()),
    );
    let est = estimate_sup(&problem.family(arms)?, &design, batch)?;
    let dev = if problem.variant == Variant::Full {
        let (m, _) = max_norm_gradient(&problem.norm_family(arms)?, arms, lambda, problem.feedback)?;
        (2.0 * epoch_log(problem.epoch, problem.delta) * m).sqrt()
    } else {
        0.0
    };
    Ok((est, dev))
}

/// Solves the design problem over the enumerated `arms`.
pub fn solve_design<R: Rng + ?Sized>(
    problem: &DesignProblem,
    arms: &[Vec<f64>],
    config: &DesignConfig,
    rng: &mut R,
) -> Result<DesignSolution> {
    problem.validate(arms)?;
    let dim = arms[0].len();
    let family = problem.family(arms)?;
    let norm_family = problem.norm_family(arms)?;
    let costs = problem.costs();
    let fit = NormalBatch::draw(config.mc_samples, dim, rng);
    let check = NormalBatch::draw(config.mc_samples, dim, rng);
    let full = problem.variant == Variant::Full;
    let log_term = epoch_log(problem.epoch, problem.delta);
    let zero_family = family.dirs.iter().all(|d| d.iter().all(|v| *v == 0.0));
    if zero_family && !full {
        return Ok(DesignSolution {
            allocation: Allocation::default(),
            objective: 0.0,
            constraint: SupEstimate::zero(config.mc_samples),
            deviation: 0.0,
            feasible: true,
        });
    }
    let fw = frank_wolfe(spanning_init(arms, problem.feedback), config.fw_iters, |lambda| {
        let wg = width_gradient(&family, arms, lambda, problem.feedback, &fit)?;
        let mut g = wg.estimate.mean.max(0.0);
        let mut grad_g = wg.grad;
        if full {
            let (m, grad_m) = max_norm_gradient(&norm_family, arms, lambda, problem.feedback)?;
            let dev = (2.0 * log_term * m).sqrt();
            g += dev;
            if dev > 0.0 {
                for (a, b) in grad_g.iter_mut().zip(&grad_m) {
                    *a += log_term * b / dev;
                }
            }
        }
        let c: f64 = costs.iter().zip(lambda).map(|(c, l)| c * l).sum();
        let grad = grad_g.iter().zip(&costs).map(|(gg, ck)| 2.0 * g * gg * c + g * g * ck).collect();
        Ok((g * g * c, grad))
    })?;
    let lambda = fw.lambda;
    let (est, dev) = unit_constraint(problem, arms, &lambda, &check)?;
    let upper = est.upper().max(0.0) + dev;
    let mass = (upper / problem.constant).powi(2);
    if mass == 0.0 {
        return Ok(DesignSolution {
            allocation: Allocation::default(),
            objective: 0.0,
            constraint: est,
            deviation: dev,
            feasible: true,
        });
    }
    let allocation = Allocation::from_dense(&lambda)?.scaled(mass);
    let scale = 1.0 / mass.sqrt();
    let constraint = est.scaled(scale);
    let deviation = dev * scale;
    let objective = allocation.entries().iter().map(|(i, w)| costs[*i] * w).sum();
    let feasible = constraint.upper() + deviation <= problem.constant * (1.0 + 1e-9);
    Ok(DesignSolution { allocation, objective, constraint, deviation, feasible })
}

/// Minimizes `max_x ||x||^2_{A_semi(lambda)^{-1}}` by Frank-Wolfe with exact
/// line search on `-log det A_semi(lambda)`; the gradient entry for arm `x` is
/// `-||x||^2_{A^{-1}}`. Returns the weights and the max-norm value.
pub fn g_optimal_semi(arms: &[Vec<f64>], budget: usize) -> Result<(Vec<f64>, f64)> {
    if arms.is_empty() {
        return Err(Error::InvalidInput("empty arm list".into()));
    }
    let d = arms[0].len();
    for k in 0..d {
        if arms.iter().all(|a| a[k] == 0.0) {
            return Err(Error::Coverage { coord: k });
        }
    }
    let sq: Vec<Vec<f64>> = arms.iter().map(|a| a.iter().map(|v| v * v).collect()).collect();
    let mut lambda = spanning_init(arms, FeedbackKind::Semi);
    let diag = |l: &[f64]| -> Vec<f64> {
        let mut a = vec![0.0; d];
        for (x, w) in sq.iter().zip(l) {
            for k in 0..d {
                a[k] += w * x[k];
            }
        }
        a
    };
    let norms = |a: &[f64]| -> Vec<f64> { sq.iter().map(|x| x.iter().zip(a).map(|(v, ak)| v / ak).sum()).collect() };
    for _ in 0..budget {
        let a = diag(&lambda);
        let n = norms(&a);
        let (j, nj) = n.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        if nj <= d as f64 * (1.0 + 1e-12) {
            break;
        }
        // Maximize sum_k log((1 - g) a_k + g x_jk^2) over g in [0, 1).
        let deriv = |g: f64| -> f64 {
            a.iter()
                .zip(&sq[j])
                .filter(|(ak, _)| **ak > 0.0)
                .map(|(ak, xk)| (xk - ak) / ((1.0 - g) * ak + g * xk))
                .sum()
        };
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
        if deriv(hi) > 0.0 {
            lo = hi;
        } else {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let step = lo;
        for l in lambda.iter_mut() {
            *l *= 1.0 - step;
        }
        lambda[j] += step;
    }
    let n = norms(&diag(&lambda));
    Ok((lambda, n.into_iter().fold(f64::NEG_INFINITY, f64::max)))
}

/// Weights minimizing `E[max_x x^T A(lambda)^{-1/2} eta]^2 + max_x ||x||^2_{A(lambda)^{-1}}`
/// over the active set, with fresh estimates of both terms at the result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GwAeDesign {
    pub lambda: Vec<f64>,
    pub gamma: SupEstimate,
    pub norm: f64,
}

pub fn gw_ae_design<R: Rng + ?Sized>(
    active: &[Vec<f64>],
    kind: FeedbackKind,
    config: &DesignConfig,
    rng: &mut R,
) -> Result<GwAeDesign> {
    if active.is_empty() {
        return Err(Error::InvalidInput("empty active set".into()));
    }
    let dim = active[0].len();
    let family = Family::arms(active)?;
    let fit = NormalBatch::draw(config.mc_samples, dim, rng);
    let check = NormalBatch::draw(config.mc_samples, dim, rng);
    let fw = frank_wolfe(spanning_init(active, kind), config.fw_iters, |lambda| {
        let wg = width_gradient(&family, active, lambda, kind, &fit)?;
        let (m, grad_m) = max_norm_gradient(&family, active, lambda, kind)?;
        let g = wg.estimate.mean;
        let grad = wg.grad.iter().zip(&grad_m).map(|(a, b)| 2.0 * g * a + b).collect();
        Ok((g * g + m, grad))
    })?;
    let design =
        DesignMatrix::accumulate(dim, kind, active.iter().map(|a| a.as_slice()).zip(fw.lambda.iter().copied()));
    let est = estimate_sup(&family, &design, &check)?;
    let gamma = SupEstimate {
        mean: est.mean * est.mean,
        std_err: 2.0 * est.mean.abs() * est.std_err,
        n_samples: est.n_samples,
    };
    let (norm, _) = max_norm_gradient(&family, active, &fw.lambda, kind)?;
    Ok(GwAeDesign { lambda: fw.lambda, gamma, norm })
}

/// Whether every coordinate touched by `arms` is binary-valued.
pub fn all_binary(arms: &[Vec<f64>]) -> bool {
    arms.iter().all(|a| is_binary(a))
}

/// Coordinates used by at least one arm.
pub fn used_coordinates(arms: &[Vec<f64>]) -> Vec<usize> {
    let mut used = std::collections::BTreeSet::new();
    for a in arms {
        used.extend(support(a));
    }
    used.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stream_rng;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn relaxed(leader: Vec<f64>, gaps: Vec<f64>, eps: f64) -> DesignProblem {
        DesignProblem {
            epsilon: eps,
            gaps,
            leader,
            delta: 0.05,
            epoch: 2,
            feedback: FeedbackKind::Semi,
            variant: Variant::Relaxed,
            constant: 0.25,
        }
    }

    /// Objective of the homogeneous rescaling of shape `lambda` on a batch.
    fn grid_objective(p: &DesignProblem, arms: &[Vec<f64>], lambda: &[f64], batch: &NormalBatch) -> f64 {
        let (est, dev) = unit_constraint(p, arms, lambda, batch).unwrap();
        let g = est.mean + dev;
        let c: f64 = p.costs().iter().zip(lambda).map(|(c, l)| c * l).sum();
        g * g * c / (p.constant * p.constant)
    }

    #[test]
    fn symmetric_two_arm_shape() {
        let arms = vec![e(2, 0), e(2, 1)];
        let p = relaxed(vec![0.0, 0.0], vec![0.0, 0.0], 0.5);
        let mut rng = stream_rng(1, "design", 0);
        let cfg = DesignConfig { fw_iters: 500, mc_samples: 4000 };
        let sol = solve_design(&p, &arms, &cfg, &mut rng).unwrap();
        let total = sol.allocation.total();
        let l0 = sol.allocation.get(0) / total;
        assert!((l0 - 0.5).abs() < 0.05, "{l0}");
        assert!(sol.feasible);
    }

    #[test]
    fn singleton_is_free() {
        let arms = vec![vec![1.0, 0.0]];
        let p = relaxed(vec![1.0, 0.0], vec![0.0], 0.5);
        let mut rng = stream_rng(2, "design", 0);
        let sol = solve_design(&p, &arms, &DesignConfig::default(), &mut rng).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.allocation.total(), 0.0);
        assert!(sol.feasible);
    }

    #[test]
    fn five_arm_within_grid_search() {
        let mut rng = stream_rng(3, "design", 0);
        let arms: Vec<Vec<f64>> = vec![
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let vals: Vec<f64> = arms.iter().map(|a| crate::model::dot(a, &theta)).collect();
        let best = crate::model::argmax_by(vals.iter().copied());
        let gaps: Vec<f64> = vals.iter().map(|v| vals[best] - v).collect();
        let p = relaxed(arms[best].clone(), gaps, 0.2);
        let cfg = DesignConfig { fw_iters: 300, mc_samples: 2000 };
        let sol = solve_design(&p, &arms, &cfg, &mut rng).unwrap();
        let batch = NormalBatch::draw(2000, 3, &mut rng);
        let mut best_grid = f64::INFINITY;
        let steps = 20;
        for a in 0..=steps {
            for b in 0..=steps - a {
                for c in 0..=steps - a - b {
                    for d in 0..=steps - a - b - c {
                        let e = steps - a - b - c - d;
                        let l: Vec<f64> = [a, b, c, d, e].iter().map(|v| *v as f64 / steps as f64).collect();
                        if unit_constraint(&p, &arms, &l, &batch).is_ok() {
                            best_grid = best_grid.min(grid_objective(&p, &arms, &l, &batch));
                        }
                    }
                }
            }
        }
        assert!(sol.objective <= 1.5 * best_grid, "{} vs {}", sol.objective, best_grid);
    }

    #[test]
    fn homogeneity_of_constraint() {
        let arms = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let p = relaxed(arms[0].clone(), vec![0.0, 0.3, 0.2], 0.1);
        let mut rng = stream_rng(4, "design", 0);
        let batch = NormalBatch::draw(1000, 3, &mut rng);
        let l = [0.2, 0.3, 0.5];
        let (a, _) = unit_constraint(&p, &arms, &l, &batch).unwrap();
        let l9: Vec<f64> = l.iter().map(|v| v * 9.0).collect();
        let (b, _) = unit_constraint(&p, &arms, &l9, &batch).unwrap();
        assert!((b.mean - a.mean / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn feasibility_survives_independent_batch() {
        let arms = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
        let p = relaxed(arms[0].clone(), vec![0.0, 0.3, 0.2, 0.5], 0.1);
        let mut rng = stream_rng(5, "design", 0);
        let sol = solve_design(&p, &arms, &DesignConfig::default(), &mut rng).unwrap();
        assert!(sol.feasible);
        let dense = sol.allocation.to_dense(arms.len());
        let batch = NormalBatch::draw(2000, 3, &mut rng);
        let (est, _) = unit_constraint(&p, &arms, &dense, &batch).unwrap();
        assert!(est.mean + 3.0 * est.std_err <= p.constant * 1.05);
    }

    #[test]
    fn full_variant_includes_deviation() {
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0 - 0.1, 0.8]];
        let mut p = relaxed(vec![1.0, 0.0], vec![0.0, 1.0, 0.1], 0.25);
        p.feedback = FeedbackKind::Bandit;
        p.variant = Variant::Full;
        let mut rng = stream_rng(6, "design", 0);
        let sol = solve_design(&p, &arms, &DesignConfig::default(), &mut rng).unwrap();
        assert!(sol.deviation > 0.0);
        assert!(sol.feasible);
        assert!(sol.constraint_upper() <= p.constant * (1.0 + 1e-9));
    }

    #[test]
    fn g_optimal_singletons() {
        for d in [3usize, 5, 8] {
            let arms: Vec<Vec<f64>> = (0..d).map(|i| e(d, i)).collect();
            let (_, v) = g_optimal_semi(&arms, 1000).unwrap();
            assert!((v - d as f64).abs() <= 1e-3);
        }
        let (_, v) = g_optimal_semi(&[vec![1.0; 4]], 10).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn g_optimal_random_binary() {
        let mut rng = stream_rng(7, "design", 0);
        for _ in 0..10 {
            let mut arms: Vec<Vec<f64>> =
                (0..8).map(|_| (0..4).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).collect();
            arms.retain(|a| a.iter().any(|v| *v != 0.0));
            if used_coordinates(&arms).len() < 4 {
                continue;
            }
            let (_, v) = g_optimal_semi(&arms, 20_000).unwrap();
            assert!((v - 4.0).abs() <= 1e-2, "{v}");
        }
    }

    #[test]
    fn g_optimal_coverage_error() {
        assert!(matches!(g_optimal_semi(&[vec![1.0, 0.0]], 10), Err(Error::Coverage { coord: 1 })));
    }

    #[test]
    fn gw_ae_singleton_and_pair() {
        let mut rng = stream_rng(8, "design", 0);
        let cfg = DesignConfig { fw_iters: 300, mc_samples: 2000 };
        let one = gw_ae_design(&[e(1, 0)], FeedbackKind::Semi, &cfg, &mut rng).unwrap();
        assert_eq!(one.lambda, vec![1.0]);
        assert_eq!(one.gamma.mean, 0.0);
        assert!((one.norm - 1.0).abs() < 1e-12);
        let two = gw_ae_design(&[e(2, 0), e(2, 1)], FeedbackKind::Semi, &cfg, &mut rng).unwrap();
        assert!((two.lambda[0] - 0.5).abs() < 0.05);
        assert!((two.norm - 2.0).abs() < 0.2);
    }

    #[test]
    fn constants() {
        assert_eq!(constraint_constant(Variant::Full, ConstantProfile::Paper, 1, 0.1), 1.0 / 128.0);
        let r = constraint_constant(Variant::Relaxed, ConstantProfile::Paper, 1, 0.1);
        let expect = 1.0 / (128.0 * (1.0 + (std::f64::consts::PI * (20.0f64).ln()).sqrt()));
        assert!((r - expect).abs() < 1e-15);
        assert_eq!(constraint_constant(Variant::Relaxed, ConstantProfile::Practical, 1, 0.1), PRACTICAL_FACTOR * r);
    }
}
