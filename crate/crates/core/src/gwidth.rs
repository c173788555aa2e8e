//! Monte Carlo Gaussian-width estimates and the quantities built on them:
//! confidence widths, the worst-case width complexity, pure-exploration
//! complexities and the asymptotic lower-bound program.
//!
//! Every estimate is a function of an explicit [`NormalBatch`], so two designs
//! evaluated on the same batch use common random numbers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{dot, support, ArmSet, DesignMatrix, FeedbackKind, InvRoot};
use crate::oracles::{Instance, LinMaxOracle};

/// `n` standard normal vectors of dimension `d`, row-major.
#[derive(Clone, Debug)]
pub struct NormalBatch {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl NormalBatch {
    pub fn draw<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        Self { n, d, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.d..(s + 1) * self.d]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

impl SupEstimate {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { mean, std_err: (var / n as f64).sqrt(), n_samples: n })
    }

    pub fn zero(n_samples: usize) -> Self {
        Self { mean: 0.0, std_err: 0.0, n_samples }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { mean: self.mean * factor, std_err: self.std_err * factor.abs(), n_samples: self.n_samples }
    }

    /// Mean plus three standard errors.
    pub fn upper(&self) -> f64 {
        self.mean + 3.0 * self.std_err
    }
}

/// Directions `v_x` with positive scales: the process is `v_x^T A^{-1/2} eta / scale_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Family {
    pub dirs: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl Family {
    pub fn new(dirs: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        if dirs.is_empty() || dirs.len() != scales.len() {
            return Err(Error::InvalidInput("family needs matching nonempty dirs and scales".into()));
        }
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("family scales must be positive and finite".into()));
        }
        Ok(Self { dirs, scales })
    }

    /// The arms themselves, unscaled.
    pub fn arms(arms: &[Vec<f64>]) -> Result<Self> {
        Self::new(arms.to_vec(), vec![1.0; arms.len()])
    }

    /// `(leader - x) / (eps + gap_x)` for every arm.
    pub fn scaled_differences(leader: &[f64], arms: &[Vec<f64>], eps: f64, gaps: &[f64]) -> Result<Self> {
        if gaps.len() != arms.len() {
            return Err(Error::InvalidInput("one gap per arm required".into()));
        }
        let dirs = arms.iter().map(|x| leader.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
        Self::new(dirs, gaps.iter().map(|g| eps + g).collect())
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Directions divided by their scales.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.dirs.iter().zip(&self.scales).map(|(d, s)| d.iter().map(|v| v / s).collect()).collect()
    }

    /// A single direction has a zero-mean supremum.
    fn is_trivial(&self) -> bool {
        let first = &self.normalized()[0];
        self.normalized().iter().all(|d| d == first)
    }
}

/// Per-sample supremum values and maximizing family indices.
pub fn sup_samples(family: &Family, root: &InvRoot, batch: &NormalBatch) -> Result<(Vec<f64>, Vec<usize>)> {
    root.require_range(&family.dirs)?;
    let norm = family.normalized();
    let d = batch.dim();
    let mut w = vec![0.0; d];
    let mut values = Vec::with_capacity(batch.len());
    let mut arg = Vec::with_capacity(batch.len());
    for s in 0..batch.len() {
        root.apply(batch.row(s), &mut w);
        let mut best = f64::NEG_INFINITY;
        let mut bi = 0;
        for (i, v) in norm.iter().enumerate() {
            let val = dot(v, &w);
            if val > best {
                best = val;
                bi = i;
            }
        }
        values.push(best);
        arg.push(bi);
    }
    Ok((values, arg))
}

/// Monte Carlo estimate of `E[sup_x v_x^T A^{-1/2} eta / scale_x]`.
pub fn estimate_sup(family: &Family, design: &DesignMatrix, batch: &NormalBatch) -> Result<SupEstimate> {
    if batch.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    let root = design.root();
    if family.is_trivial() {
        root.require_range(&family.dirs)?;
        return Ok(SupEstimate::zero(batch.len()));
    }
    let (values, _) = sup_samples(family, &root, batch)?;
    SupEstimate::from_samples(&values)
}

/// Maximizes `(leader - x)^T w / (beta + theta_bar^T (leader - x))` over the
/// oracle's class with Dinkelbach's parametric iteration: each step is one
/// oracle call on `-w + r theta_bar`.
pub fn ratio_max(
    w: &[f64],
    leader: &[f64],
    theta_bar: &[f64],
    beta: f64,
    oracle: &dyn LinMaxOracle,
) -> Result<(f64, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta = {beta} must be positive")));
    }
    let lw = dot(leader, w);
    let lt = dot(leader, theta_bar);
    let ratio = |x: &[f64]| -> Result<f64> {
        let den = beta + lt - dot(theta_bar, x);
        if !(den > 0.0) {
            return Err(Error::InvalidInput(
                "ratio denominator is not positive; leader must maximize theta_bar".into(),
            ));
        }
        Ok((lw - dot(x, w)) / den)
    };
    let mut v: Vec<f64> = w.iter().map(|x| -x).collect();
    let mut x = oracle.argmax(&v)?;
    let mut r = ratio(&x)?;
    for _ in 0..200 {
        for ((vi, wi), ti) in v.iter_mut().zip(w).zip(theta_bar) {
            *vi = -wi + r * ti;
        }
        let cand = oracle.argmax(&v)?;
        let rc = ratio(&cand)?;
        if rc <= r + 1e-15 * r.abs().max(1.0) {
            return Ok((r, x));
        }
        r = rc;
        x = cand;
    }
    let arms = oracle.enumerate().ok_or_else(|| Error::InvalidInput("ratio search did not terminate".into()))?;
    let mut best = (f64::NEG_INFINITY, arms[0].clone());
    for a in arms {
        let val = ratio(&a)?;
        if val > best.0 {
            best = (val, a);
        }
    }
    Ok(best)
}

/// [`ratio_max`] with `w = A_semi^{-1/2} eta` for the diagonal design `a_diag`.
pub fn compute_max(
    a_diag: &[f64],
    eta: &[f64],
    leader: &[f64],
    theta_bar: &[f64],
    beta: f64,
    oracle: &dyn LinMaxOracle,
) -> Result<(f64, Vec<f64>)> {
    if a_diag.iter().any(|a| !(*a > 0.0)) {
        let rank = a_diag.iter().filter(|a| **a > 0.0).count();
        return Err(Error::SingularDesign { rank, dim: a_diag.len() });
    }
    let w: Vec<f64> = eta.iter().zip(a_diag).map(|(e, a)| e / a.sqrt()).collect();
    ratio_max(&w, leader, theta_bar, beta, oracle)
}

/// Oracle-path estimate of the scaled-difference supremum for a semi-bandit design.
pub fn estimate_sup_oracle(
    a_diag: &[f64],
    leader: &[f64],
    theta_bar: &[f64],
    beta: f64,
    oracle: &dyn LinMaxOracle,
    batch: &NormalBatch,
) -> Result<SupEstimate> {
    let mut values = Vec::with_capacity(batch.len());
    for s in 0..batch.len() {
        values.push(compute_max(a_diag, batch.row(s), leader, theta_bar, beta, oracle)?.0);
    }
    SupEstimate::from_samples(&values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfidenceWidth {
    pub gaussian_width_term: f64,
    pub gaussian_width_std_err: f64,
    pub deviation_term: f64,
    pub total: f64,
    pub delta: f64,
}

/// Simultaneous confidence width for `x^T (theta_hat - theta)` over the family:
/// expected supremum plus `sqrt(2 sup ||x||^2_{A^{-1}} log(2/delta))`.
pub fn tis_width(family: &Family, design: &DesignMatrix, delta: f64, batch: &NormalBatch) -> Result<ConfidenceWidth> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta = {delta} must lie in (0, 1)")));
    }
    let gw = estimate_sup(family, design, batch)?;
    let root = design.root();
    let sup_norm = family.normalized().iter().map(|v| root.norm_sq(v)).fold(0.0, f64::max);
    let deviation_term = (2.0 * sup_norm * (2.0 / delta).ln()).sqrt();
    let gaussian_width_term = gw.mean.max(0.0);
    Ok(ConfidenceWidth {
        gaussian_width_term,
        gaussian_width_std_err: gw.std_err,
        deviation_term,
        total: gaussian_width_term + deviation_term,
        delta,
    })
}

/// Divided differences of `t -> t^{-1/2}` on the eigenvalues (zero on the null space).
fn inv_sqrt_divided_differences(evals: &[f64], inv_sqrt: &[f64]) -> DMatrix<f64> {
    let n = evals.len();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if inv_sqrt[i] == 0.0 || inv_sqrt[j] == 0.0 {
                continue;
            }
            let (a, b) = (evals[i], evals[j]);
            f[(i, j)] = if (a - b).abs() <= 1e-10 * a.max(b) {
                let m = 0.5 * (a + b);
                -0.5 * m.powf(-1.5)
            } else {
                (inv_sqrt[i] - inv_sqrt[j]) / (a - b)
            };
        }
    }
    f
}

/// Width value and its gradient with respect to the weights of `arms`.
#[derive(Clone, Debug)]
pub struct WidthGradient {
    pub estimate: SupEstimate,
    pub grad: Vec<f64>,
}

/// Sample-average width of `family` under `A(lambda)` and its exact gradient
/// in `lambda` (diagonal chain rule for semi-bandit designs, divided
/// differences of the inverse square root for full designs).
pub fn width_gradient(
    family: &Family,
    arms: &[Vec<f64>],
    lambda: &[f64],
    kind: FeedbackKind,
    batch: &NormalBatch,
) -> Result<WidthGradient> {
    let dim = batch.dim();
    let design = DesignMatrix::accumulate(dim, kind, arms.iter().map(|a| a.as_slice()).zip(lambda.iter().copied()));
    let root = design.root();
    if family.is_trivial() {
        root.require_range(&family.dirs)?;
        return Ok(WidthGradient { estimate: SupEstimate::zero(batch.len()), grad: vec![0.0; arms.len()] });
    }
    let (values, arg) = sup_samples(family, &root, batch)?;
    let estimate = SupEstimate::from_samples(&values)?;
    let norm = family.normalized();
    let n = batch.len() as f64;
    let grad = match &root {
        InvRoot::Semi { inv_sqrt, .. } => {
            let mut g = vec![0.0; dim];
            for (s, &i) in arg.iter().enumerate() {
                let eta = batch.row(s);
                for k in support(&norm[i]) {
                    g[k] += -0.5 * norm[i][k] * eta[k] * inv_sqrt[k].powi(3);
                }
            }
            arms.iter().map(|x| x.iter().zip(&g).map(|(v, gk)| v * v * gk).sum::<f64>() / n).collect()
        }
        InvRoot::Band { q, evals, inv_sqrt, .. } => {
            let qt = q.transpose();
            let mut m = DMatrix::<f64>::zeros(dim, dim);
            for (s, &i) in arg.iter().enumerate() {
                let p = &qt * DVector::from_column_slice(&norm[i]);
                let r = &qt * DVector::from_column_slice(batch.row(s));
                m.ger(1.0, &p, &r, 1.0);
            }
            let f = inv_sqrt_divided_differences(evals, inv_sqrt);
            let g = f.component_mul(&m) / n;
            let g = (&g + g.transpose()) * 0.5;
            arms.iter()
                .map(|x| {
                    let qx = &qt * DVector::from_column_slice(x);
                    qx.dot(&(&g * &qx))
                })
                .collect()
        }
    };
    Ok(WidthGradient { estimate, grad })
}

/// `max_x ||v_x||^2_{A(lambda)^{-1}}` over the normalized family and its gradient.
pub fn max_norm_gradient(
    family: &Family,
    arms: &[Vec<f64>],
    lambda: &[f64],
    kind: FeedbackKind,
) -> Result<(f64, Vec<f64>)> {
    let dim = family.dirs[0].len();
    let design = DesignMatrix::accumulate(dim, kind, arms.iter().map(|a| a.as_slice()).zip(lambda.iter().copied()));
    let root = design.root();
    root.require_range(&family.dirs)?;
    let norm = family.normalized();
    let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
    for (i, v) in norm.iter().enumerate() {
        let val = root.norm_sq(v);
        if val > best {
            best = val;
            bi = i;
        }
    }
    let v = &norm[bi];
    let grad = match &root {
        InvRoot::Semi { inv_sqrt, .. } => arms
            .iter()
            .map(|x| -x.iter().zip(v).zip(inv_sqrt).map(|((xk, vk), s)| xk * xk * vk * vk * s.powi(4)).sum::<f64>())
            .collect(),
        InvRoot::Band { pinv, .. } => {
            let u = pinv * DVector::from_column_slice(v);
            arms.iter()
                .map(|x| {
                    let t = DVector::from_column_slice(x).dot(&u);
                    -t * t
                })
                .collect()
        }
    };
    Ok((best, grad))
}

/// Result of [`frank_wolfe`]: best iterate seen and its value.
#[derive(Clone, Debug)]
pub struct FwResult {
    pub lambda: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Frank-Wolfe over the probability simplex with step `2/(r+2)`, `r >= 1`.
/// `eval` returns the objective and its gradient. Starting at `r = 1` keeps
/// a third of the initial mass, so the initial support stays positive.
pub fn frank_wolfe(
    init: Vec<f64>,
    iters: usize,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<FwResult> {
    let mut lambda = init;
    let mut best = (f64::INFINITY, lambda.clone());
    for r in 1..=iters.max(1) {
        let (val, grad) = eval(&lambda)?;
        if val < best.0 {
            best = (val, lambda.clone());
        }
        let j =
            grad.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, g)| if *g < acc.1 { (i, *g) } else { acc }).0;
        let step = 2.0 / (r as f64 + 2.0);
        for l in lambda.iter_mut() {
            *l *= 1.0 - step;
        }
        lambda[j] += step;
    }
    let (val, _) = eval(&lambda)?;
    if val < best.0 {
        best = (val, lambda.clone());
    }
    Ok(FwResult { lambda: best.1, value: best.0, iterations: iters })
}

/// Uniform weights on a greedy subset of `arms` that spans (band) or covers
/// (semi) the same space as all of them.
pub fn spanning_init(arms: &[Vec<f64>], kind: FeedbackKind) -> Vec<f64> {
    let n = arms.len();
    let dim = arms.first().map(|a| a.len()).unwrap_or(0);
    let mut chosen = Vec::new();
    match kind {
        FeedbackKind::Semi => {
            let mut covered = vec![false; dim];
            for (j, a) in arms.iter().enumerate() {
                if support(a).any(|k| !covered[k]) {
                    for k in support(a) {
                        covered[k] = true;
                    }
                    chosen.push(j);
                }
            }
        }
        FeedbackKind::Bandit => {
            let mut basis: Vec<DVector<f64>> = Vec::new();
            for (j, a) in arms.iter().enumerate() {
                let mut v = DVector::from_column_slice(a);
                for b in &basis {
                    let c = v.dot(b);
                    v.axpy(-c, b, 1.0);
                }
                let nv = v.norm();
                if nv > 1e-9 * DVector::from_column_slice(a).norm().max(1e-300) {
                    basis.push(v / nv);
                    chosen.push(j);
                }
            }
        }
    }
    if chosen.is_empty() {
        chosen.push(0);
    }
    let mut lambda = vec![0.0; n];
    for &j in &chosen {
        lambda[j] = 1.0 / chosen.len() as f64;
    }
    lambda
}

/// Minimizes the squared width of `family` over weights on `arms`; returns the
/// weights (fit on `fit`) and a fresh squared-width estimate (on `check`).
pub fn min_squared_width(
    family: &Family,
    arms: &[Vec<f64>],
    kind: FeedbackKind,
    iters: usize,
    fit: &NormalBatch,
    check: &NormalBatch,
) -> Result<(Vec<f64>, SupEstimate)> {
    let init = spanning_init(arms, kind);
    let fw = frank_wolfe(init, iters, |l| {
        let wg = width_gradient(family, arms, l, kind, fit)?;
        let g = wg.estimate.mean;
        Ok((g * g, wg.grad.iter().map(|x| 2.0 * g * x).collect()))
    })?;
    let design =
        DesignMatrix::accumulate(check.dim(), kind, arms.iter().map(|a| a.as_slice()).zip(fw.lambda.iter().copied()));
    let est = estimate_sup(family, &design, check)?;
    let sq = SupEstimate {
        mean: est.mean * est.mean,
        std_err: 2.0 * est.mean.abs() * est.std_err,
        n_samples: est.n_samples,
    };
    Ok((fw.lambda, sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaPoint {
    pub epsilon: f64,
    pub estimate: f64,
    pub std_err: f64,
}

/// Grid `Delta_max 2^{-j}`, `j = 0..=ceil(log2(Delta_max / Delta_min))`.
pub fn epsilon_grid(delta_max: f64, delta_min: f64) -> Vec<f64> {
    if !(delta_max > 0.0) || !(delta_min > 0.0) || !delta_min.is_finite() {
        return vec![delta_max.max(0.0)];
    }
    let j_max = (delta_max / delta_min).log2().ceil().max(0.0) as i32;
    (0..=j_max).map(|j| delta_max * 2f64.powi(-j)).collect()
}

/// Squared minimal width of every gap-filtered subset `{x : Delta_x <= eps}` on the grid.
pub fn gamma_bar_grid<R: Rng + ?Sized>(
    instance: &Instance,
    kind: FeedbackKind,
    n_samples: usize,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<GammaPoint>> {
    let set = instance.require_arm_set()?;
    let gaps = instance.true_gaps()?;
    if set.len() == 1 {
        return Ok(vec![GammaPoint { epsilon: 0.0, estimate: 0.0, std_err: 0.0 }]);
    }
    let grid = epsilon_grid(instance.delta_max()?, instance.delta_min()?);
    let mut out = Vec::with_capacity(grid.len());
    for eps in grid {
        let active: Vec<Vec<f64>> =
            set.arms().iter().zip(gaps).filter(|(_, g)| **g <= eps * (1.0 + 1e-12)).map(|(a, _)| a.clone()).collect();
        if active.len() == 1 {
            out.push(GammaPoint { epsilon: eps, estimate: 0.0, std_err: 0.0 });
            continue;
        }
        let family = Family::arms(&active)?;
        let fit = NormalBatch::draw(n_samples, set.dim(), rng);
        let check = NormalBatch::draw(n_samples, set.dim(), rng);
        let (_, sq) = min_squared_width(&family, &active, kind, budget, &fit, &check)?;
        out.push(GammaPoint { epsilon: eps, estimate: sq.mean, std_err: sq.std_err });
    }
    Ok(out)
}

/// Largest entry of [`gamma_bar_grid`].
pub fn gamma_bar<R: Rng + ?Sized>(
    instance: &Instance,
    kind: FeedbackKind,
    n_samples: usize,
    budget: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(gamma_bar_grid(instance, kind, n_samples, budget, rng)?.iter().map(|p| p.estimate).fold(0.0, f64::max))
}

/// Mirror-descent iterations used for the deviation complexity.
pub const RHO_ITERATIONS: usize = 4000;

/// `rho* = min_lambda max_{x != x*} ||x* - x||^2_{A(lambda)^{-1}} / Delta_x^2`
/// by entropic mirror descent with normalized subgradients (best iterate kept).
pub fn rho_star(set: &ArmSet, gaps: &[f64], kind: FeedbackKind) -> Result<f64> {
    let best = gaps.iter().position(|g| *g == 0.0).ok_or(Error::NonUniqueOptimum)?;
    let (dirs, scales): (Vec<Vec<f64>>, Vec<f64>) = set
        .arms()
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(x, g)| (set.arm(best).iter().zip(x).map(|(a, b)| a - b).collect(), *g))
        .unzip();
    if dirs.is_empty() {
        return Ok(0.0);
    }
    let family = Family::new(dirs, scales)?;
    let arms = set.arms();
    let mut lambda = vec![1.0 / arms.len() as f64; arms.len()];
    let mut best_val = f64::INFINITY;
    for t in 1..=RHO_ITERATIONS {
        let (val, grad) = max_norm_gradient(&family, arms, &lambda, kind)?;
        best_val = best_val.min(val);
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale == 0.0 {
            break;
        }
        let step = 1.0 / (t as f64).sqrt();
        let mut total = 0.0;
        for (l, g) in lambda.iter_mut().zip(&grad) {
            *l *= (-step * g / scale).exp();
            total += *l;
        }
        for l in lambda.iter_mut() {
            *l = (*l / total).max(1e-300);
        }
    }
    Ok(best_val)
}

/// `(rho*, gamma*)` for an enumerable instance; `gamma*` is the minimal squared
/// width of the gap-normalized family `(x* - x) / Delta_x`, `x != x*`.
pub fn bai_complexities<R: Rng + ?Sized>(
    instance: &Instance,
    kind: FeedbackKind,
    n_samples: usize,
    budget: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let set = instance.require_arm_set()?;
    let gaps = instance.true_gaps()?;
    let rho = rho_star(set, gaps, kind)?;
    let best = gaps.iter().position(|g| *g == 0.0).ok_or(Error::NonUniqueOptimum)?;
    let (dirs, scales): (Vec<Vec<f64>>, Vec<f64>) = set
        .arms()
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(x, g)| (set.arm(best).iter().zip(x).map(|(a, b)| a - b).collect(), *g))
        .unzip();
    if dirs.is_empty() {
        return Ok((rho, 0.0));
    }
    let family = Family::new(dirs, scales)?;
    let fit = NormalBatch::draw(n_samples, set.dim(), rng);
    let check = NormalBatch::draw(n_samples, set.dim(), rng);
    let (_, sq) = min_squared_width(&family, set.arms(), kind, budget, &fit, &check)?;
    Ok((rho, sq.mean))
}

/// Value of the asymptotic lower-bound program
/// `min sum_x tau_x Delta_x  s.t.  sum_{i in x} 1 / (sum_{x' ∋ i} tau_{x'}) <= Delta_x^2 / 2`
/// for every suboptimal `x`, solved by a log-barrier Newton method. The best
/// arm is pulled for free, so its coordinates have unbounded counts.
pub fn asymptotic_lb(instance: &Instance) -> Result<f64> {
    let set = instance.require_arm_set()?;
    if !set.is_binary() {
        return Err(Error::InvalidInput("lower-bound program needs binary arms".into()));
    }
    let gaps = instance.true_gaps()?;
    let best = instance.best_arm();
    let dim = set.dim();
    let free: Vec<bool> = best.iter().map(|v| *v != 0.0).collect();
    let vars: Vec<usize> = (0..set.len()).filter(|&j| gaps[j] > 0.0).collect();
    // Constraint rows: (coordinates outside the best arm, right-hand side).
    let rows: Vec<(Vec<usize>, f64)> = vars
        .iter()
        .map(|&j| {
            let coords: Vec<usize> = support(set.arm(j)).filter(|&k| !free[k]).collect();
            (coords, gaps[j] * gaps[j] / 2.0)
        })
        .filter(|(c, _)| !c.is_empty())
        .collect();
    if rows.is_empty() {
        return Ok(0.0);
    }
    let nv = vars.len();
    let cost: Vec<f64> = vars.iter().map(|&j| gaps[j]).collect();
    let member: Vec<Vec<f64>> = vars.iter().map(|&j| set.arm(j).to_vec()).collect();
    let counts = |tau: &[f64]| -> Vec<f64> {
        let mut s = vec![0.0; dim];
        for (x, t) in member.iter().zip(tau) {
            for k in support(x) {
                s[k] += t;
            }
        }
        s
    };
    let slack =
        |s: &[f64]| -> Vec<f64> { rows.iter().map(|(c, b)| b - c.iter().map(|&k| 1.0 / s[k]).sum::<f64>()).collect() };
    let feasible =
        |tau: &[f64]| -> bool { tau.iter().all(|t| *t > 0.0) && slack(&counts(tau)).iter().all(|u| *u > 0.0) };
    let big = rows.iter().map(|(c, b)| 2.0 * c.len() as f64 / b).fold(1.0, f64::max);
    let mut tau = vec![big; nv];
    let barrier = |tau: &[f64], t: f64| -> f64 {
        let s = counts(tau);
        t * dot(&cost, tau) - slack(&s).iter().map(|u| u.ln()).sum::<f64>() - tau.iter().map(|x| x.ln()).sum::<f64>()
    };
    let n_terms = (rows.len() + nv) as f64;
    let mut t = n_terms / dot(&cost, &tau).max(1e-12);
    for _outer in 0..60 {
        for _newton in 0..200 {
            let s = counts(&tau);
            let u = slack(&s);
            let mut grad = DVector::from_iterator(nv, cost.iter().map(|c| t * c));
            let mut hess = DMatrix::<f64>::zeros(nv, nv);
            for j in 0..nv {
                grad[j] -= 1.0 / tau[j];
                hess[(j, j)] += 1.0 / (tau[j] * tau[j]);
            }
            for ((coords, _), ur) in rows.iter().zip(&u) {
                let mut dg = DVector::<f64>::zeros(nv);
                let mut d2 = DMatrix::<f64>::zeros(nv, nv);
                for &k in coords {
                    let inv2 = 1.0 / (s[k] * s[k]);
                    let inv3 = 2.0 / (s[k] * s[k] * s[k]);
                    let users: Vec<usize> = (0..nv).filter(|&j| member[j][k] != 0.0).collect();
                    for &a in &users {
                        dg[a] -= inv2;
                        for &b in &users {
                            d2[(a, b)] += inv3;
                        }
                    }
                }
                grad += &dg / *ur;
                hess += d2 / *ur + (&dg * dg.transpose()) / (ur * ur);
            }
            let step = match hess.clone().cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => -&grad,
            };
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-12 {
                break;
            }
            let f0 = barrier(&tau, t);
            let mut a = 1.0;
            loop {
                let trial: Vec<f64> = tau.iter().zip(step.iter()).map(|(x, d)| x + a * d).collect();
                if feasible(&trial) && barrier(&trial, t) <= f0 - 0.25 * a * decrement {
                    tau = trial;
                    break;
                }
                a *= 0.5;
                if a < 1e-20 {
                    break;
                }
            }
            if a < 1e-20 {
                break;
            }
        }
        let value = dot(&cost, &tau);
        if n_terms / t < 1e-9 * value.max(1e-12) {
            break;
        }
        t *= 8.0;
    }
    // Keep a small margin inside the feasible set.
    let value = dot(&cost, &tau) * (1.0 + 1e-6);
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stream_rng, Allocation};
    use crate::oracles::{build_instance, EnumeratedOracle, InstanceSpec, TopKOracle};
    use rand::Rng;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn semi_design(diag: &[f64]) -> DesignMatrix {
        DesignMatrix::Semi(DVector::from_column_slice(diag))
    }

    #[test]
    fn zero_direction_family_is_zero() {
        let fam = Family::arms(&[vec![0.0, 0.0]]).unwrap();
        let mut rng = stream_rng(1, "gw", 0);
        let b = NormalBatch::draw(100, 2, &mut rng);
        let est = estimate_sup(&fam, &semi_design(&[1.0, 1.0]), &b).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn two_singletons_match_order_statistic() {
        let fam = Family::arms(&[e(2, 0), e(2, 1)]).unwrap();
        let mut rng = stream_rng(2, "gw", 0);
        let b = NormalBatch::draw(100_000, 2, &mut rng);
        let est = estimate_sup(&fam, &semi_design(&[1.0, 1.0]), &b).unwrap();
        let exact = 1.0 / std::f64::consts::PI.sqrt();
        assert!((est.mean - exact).abs() <= 3.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn doubling_mass_divides_by_sqrt_two() {
        let fam = Family::arms(&[e(3, 0), e(3, 1), vec![1.0, 1.0, 1.0]]).unwrap();
        let mut rng = stream_rng(3, "gw", 0);
        let b = NormalBatch::draw(5000, 3, &mut rng);
        let a = estimate_sup(&fam, &semi_design(&[1.0, 2.0, 3.0]), &b).unwrap();
        let a2 = estimate_sup(&fam, &semi_design(&[2.0, 4.0, 6.0]), &b).unwrap();
        assert!((a2.mean - a.mean / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn singular_design_is_reported() {
        let fam = Family::arms(&[e(2, 0), e(2, 1)]).unwrap();
        let mut rng = stream_rng(3, "gw", 0);
        let b = NormalBatch::draw(10, 2, &mut rng);
        assert!(matches!(estimate_sup(&fam, &semi_design(&[1.0, 0.0]), &b), Err(Error::SingularDesign { .. })));
        let one = NormalBatch::draw(1, 2, &mut rng);
        assert!(matches!(estimate_sup(&fam, &semi_design(&[1.0, 1.0]), &one), Err(Error::InvalidInput(_))));
    }

    fn brute_ratio(arms: &[Vec<f64>], w: &[f64], leader: &[f64], theta: &[f64], beta: f64) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, x) in arms.iter().enumerate() {
            let v = (dot(leader, w) - dot(x, w)) / (beta + dot(theta, leader) - dot(theta, x));
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    }

    #[test]
    fn ratio_max_matches_brute_force() {
        let mut rng = stream_rng(4, "gw", 0);
        let oracle = TopKOracle { m: 7, k: 3 };
        let arms = oracle.enumerate().unwrap();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let leader = oracle.argmax(&theta).unwrap();
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(0.1..2.0)).collect();
            let eta: Vec<f64> = (0..7).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = eta.iter().zip(&a).map(|(e, a)| e / a.sqrt()).collect();
            let beta = rng.random_range(0.05..1.0);
            let (v, x) = compute_max(&a, &eta, &leader, &theta, beta, &oracle).unwrap();
            let (bv, bi) = brute_ratio(&arms, &w, &leader, &theta, beta);
            assert!((v - bv).abs() <= 1e-9, "{v} vs {bv}");
            assert_eq!(x, arms[bi]);
        }
    }

    #[test]
    fn ratio_max_on_singleton_is_zero() {
        let o = EnumeratedOracle::new(ArmSet::new(vec![vec![1.0, 0.0]]).unwrap());
        let (v, _) = ratio_max(&[0.3, -2.0], &[1.0, 0.0], &[0.5, 0.1], 0.2, &o).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ratio_max_scales_inversely_with_beta() {
        let o = TopKOracle { m: 5, k: 2 };
        let w = [0.3, -1.2, 0.7, 2.0, -0.1];
        let leader = [1.0, 1.0, 0.0, 0.0, 0.0];
        let (v1, _) = ratio_max(&w, &leader, &[0.0; 5], 1.0, &o).unwrap();
        let (v2, _) = ratio_max(&w, &leader, &[0.0; 5], 2.0, &o).unwrap();
        assert!((v1 / v2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn tis_singleton_arm() {
        let fam = Family::arms(&[e(2, 0)]).unwrap();
        let mut rng = stream_rng(5, "gw", 0);
        let b = NormalBatch::draw(100, 2, &mut rng);
        let n = 50.0;
        let w = tis_width(&fam, &semi_design(&[n, 0.0]), 0.1, &b).unwrap();
        assert_eq!(w.gaussian_width_term, 0.0);
        assert!((w.deviation_term - (2.0 * (20.0f64).ln() / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tis_two_arm_width() {
        let fam = Family::arms(&[e(2, 0), e(2, 1)]).unwrap();
        let mut rng = stream_rng(6, "gw", 0);
        let b = NormalBatch::draw(100_000, 2, &mut rng);
        let n = 16.0;
        let w = tis_width(&fam, &semi_design(&[n, n]), 0.1, &b).unwrap();
        let exact = 1.0 / std::f64::consts::PI.sqrt() / n.sqrt();
        assert!((w.gaussian_width_term - exact).abs() <= 3.0 * w.gaussian_width_std_err);
    }

    #[test]
    fn tis_coverage_simulation() {
        let mut rng = stream_rng(7, "gw", 0);
        let arms = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let alloc = Allocation::new([(0, 5.0), (1, 3.0), (2, 8.0)]).unwrap();
        let design = crate::model::design_matrix(&arms, &alloc, FeedbackKind::Semi).unwrap();
        let DesignMatrix::Semi(counts) = &design else { panic!() };
        let fam = Family::arms(&arms).unwrap();
        let b = NormalBatch::draw(20_000, 3, &mut rng);
        let delta = 0.1;
        let w = tis_width(&fam, &design, delta, &b).unwrap();
        let trials = 1000;
        let mut bad = 0;
        for _ in 0..trials {
            let err: Vec<f64> = counts.iter().map(|c| rng.sample::<f64, _>(StandardNormal) / c.sqrt()).collect();
            if arms.iter().any(|x| dot(x, &err).abs() > w.total) {
                bad += 1;
            }
        }
        let se = (delta * (1.0 - delta) / trials as f64).sqrt();
        assert!((bad as f64 / trials as f64) <= delta + 3.0 * se);
    }

    /// Finite differences of the sample-average width with common random numbers.
    fn fd_check(kind: FeedbackKind, arms: Vec<Vec<f64>>, family: Family, lambda: Vec<f64>) {
        let mut rng = stream_rng(8, "gw", 0);
        let b = NormalBatch::draw(20_000, arms[0].len(), &mut rng);
        let wg = width_gradient(&family, &arms, &lambda, kind, &b).unwrap();
        let h = 1e-5;
        for j in 0..arms.len() {
            let mut lp = lambda.clone();
            lp[j] += h;
            let mut lm = lambda.clone();
            lm[j] -= h;
            let fp = width_gradient(&family, &arms, &lp, kind, &b).unwrap().estimate.mean;
            let fm = width_gradient(&family, &arms, &lm, kind, &b).unwrap().estimate.mean;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - wg.grad[j]).abs() <= 1e-3 * fd.abs().max(1e-3), "arm {j}: {fd} vs {}", wg.grad[j]);
        }
    }

    #[test]
    fn semi_width_gradient_matches_finite_differences() {
        let arms = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let fam = Family::arms(&arms).unwrap();
        fd_check(FeedbackKind::Semi, arms, fam, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn band_width_gradient_matches_finite_differences() {
        let arms = vec![vec![1.0, 0.2, 0.0], vec![0.1, 1.0, 0.3], vec![0.0, 0.4, 1.0], vec![0.7, 0.7, 0.1]];
        let fam = Family::scaled_differences(&arms[0], &arms, 0.3, &[0.0, 0.5, 0.2, 0.9]).unwrap();
        fd_check(FeedbackKind::Bandit, arms, fam, vec![0.25, 0.35, 0.15, 0.25]);
    }

    #[test]
    fn max_norm_gradient_matches_finite_differences() {
        let arms = vec![vec![1.0, 0.2], vec![0.1, 1.0], vec![0.7, 0.7]];
        let fam = Family::arms(&arms).unwrap();
        for kind in [FeedbackKind::Bandit, FeedbackKind::Semi] {
            let arms: Vec<Vec<f64>> = if kind == FeedbackKind::Semi {
                vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
            } else {
                arms.clone()
            };
            let fam = if kind == FeedbackKind::Semi { Family::arms(&arms).unwrap() } else { fam.clone() };
            let lambda = vec![0.5, 0.3, 0.2];
            let (_, g) = max_norm_gradient(&fam, &arms, &lambda, kind).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let mut lp = lambda.clone();
                lp[j] += h;
                let mut lm = lambda.clone();
                lm[j] -= h;
                let fd = (max_norm_gradient(&fam, &arms, &lp, kind).unwrap().0
                    - max_norm_gradient(&fam, &arms, &lm, kind).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1.0), "{kind:?} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn gamma_bar_singleton_is_zero() {
        let inst = Instance::explicit(vec![vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
        let mut rng = stream_rng(9, "gw", 0);
        assert_eq!(gamma_bar(&inst, FeedbackKind::Semi, 100, 10, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn gamma_bar_singletons_within_d_log_d() {
        for d in [4usize, 8] {
            let arms: Vec<Vec<f64>> = (0..d).map(|i| e(d, i)).collect();
            let mut theta = vec![0.5; d];
            theta[0] = 1.0;
            let inst = Instance::explicit(arms, theta).unwrap();
            let mut rng = stream_rng(10, "gw", d as u64);
            let g = gamma_bar(&inst, FeedbackKind::Semi, 2000, 200, &mut rng).unwrap();
            assert!(g <= 3.0 * d as f64 * (d as f64).ln(), "d={d}: {g}");
            assert!(g > 0.0);
        }
    }

    #[test]
    fn rho_star_two_singletons() {
        let inst = Instance::explicit(vec![e(2, 0), e(2, 1)], vec![1.0, 0.0]).unwrap();
        let mut rng = stream_rng(11, "gw", 0);
        let (rho, gamma) = bai_complexities(&inst, FeedbackKind::Semi, 2000, 100, &mut rng).unwrap();
        assert!((rho - 4.0).abs() < 4e-3, "{rho}");
        assert!(gamma <= 2.0 * rho);
        let half = Instance::explicit(vec![e(2, 0), e(2, 1)], vec![0.5, 0.0]).unwrap();
        let (rho_half, _) = bai_complexities(&half, FeedbackKind::Semi, 2000, 10, &mut rng).unwrap();
        assert!((rho_half / rho - 4.0).abs() < 1e-9);
    }

    #[test]
    fn lower_bound_two_arms() {
        for gap in [0.1, 0.5, 1.0] {
            let inst = Instance::explicit(vec![e(2, 0), e(2, 1)], vec![1.0, 1.0 - gap]).unwrap();
            let v = asymptotic_lb(&inst).unwrap();
            assert!((v - 2.0 / gap).abs() <= 0.01 * 2.0 / gap, "{gap}: {v}");
        }
    }

    #[test]
    fn lower_bound_counterexample_below_feasible_point() {
        let inst = build_instance(&InstanceSpec::OptimismCounterexample { m: 9, eps: 0.5 }).unwrap();
        let v = asymptotic_lb(&inst).unwrap();
        assert!(v <= 4.0 * 4.0 / 0.25, "{v}");
        assert!(v > 0.0);
    }

    #[test]
    fn lower_bound_scales_inversely() {
        let arms = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let theta = vec![0.6, 0.3, 0.1];
        let a = asymptotic_lb(&Instance::explicit(arms.clone(), theta.clone()).unwrap()).unwrap();
        let b = asymptotic_lb(&Instance::explicit(arms, theta.iter().map(|t| t * 2.0).collect()).unwrap()).unwrap();
        assert!((a / b - 2.0).abs() < 1e-4, "{a} {b}");
    }

    #[test]
    fn frank_wolfe_finds_symmetric_minimum() {
        // f(l) = 1/l0 + 1/l1 is minimized at (1/2, 1/2).
        let fw = frank_wolfe(vec![0.9, 0.1], 500, |l| {
            Ok((1.0 / l[0] + 1.0 / l[1], vec![-1.0 / (l[0] * l[0]), -1.0 / (l[1] * l[1])]))
        })
        .unwrap();
        assert!((fw.lambda[0] - 0.5).abs() < 0.01);
    }
}
