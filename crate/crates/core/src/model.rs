//! Arm sets, design matrices, feedback sampling and the two estimators.
//!
//! Arms are dense `f64` vectors. Allocations are sparse maps from an arm index
//! (into an [`ArmSet`] or an [`ArmPool`]) to a nonnegative weight.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ridge added to a singular Gram matrix, for estimation only.
pub const SINGULAR_RIDGE: f64 = 1e-10;
/// Two arm values closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest one count as zero.
pub const EIG_REL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    /// One scalar reward `x^T theta + noise` per pull.
    Bandit,
    /// One reward `theta_i + noise` per active coordinate of the pulled arm.
    #[serde(alias = "semi_bandit", alias = "semi-bandit")]
    Semi,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn is_binary(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Indices of the nonzero coordinates.
pub fn support(x: &[f64]) -> impl Iterator<Item = usize> + '_ {
    x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i)
}

fn arm_key(x: &[f64]) -> Vec<u64> {
    // `+ 0.0` folds -0.0 into 0.0
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// A finite, explicitly enumerated set of arms with no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSet {
    arms: Vec<Vec<f64>>,
    dim: usize,
}

impl ArmSet {
    pub fn new(arms: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = arms.first() else {
            return Err(Error::InvalidInput("arm set is empty".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("arms have dimension 0".into()));
        }
        let mut seen = HashMap::new();
        for (i, a) in arms.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::InvalidInput(format!("arm {i} has dimension {}, expected {dim}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("arm {i} has a non-finite entry")));
            }
            if let Some(j) = seen.insert(arm_key(a), i) {
                return Err(Error::InvalidInput(format!("arms {j} and {i} are identical")));
            }
        }
        Ok(Self { arms, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &[f64] {
        &self.arms[i]
    }

    pub fn is_binary(&self) -> bool {
        self.arms.iter().all(|a| is_binary(a))
    }

    /// Largest Euclidean distance between two arms.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.arms.iter().enumerate() {
            for b in &self.arms[i + 1..] {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    /// Index of the arm maximizing `x^T v`; ties go to the lowest index.
    pub fn argmax(&self, v: &[f64]) -> usize {
        argmax_by(self.arms.iter().map(|a| dot(a, v)))
    }
}

/// First index attaining the maximum (exact comparison).
pub fn argmax_by(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if i == 0 || v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Growable set of arms discovered through an oracle, indexed by insertion order.
#[derive(Clone, Debug)]
pub struct ArmPool {
    arms: Vec<Vec<f64>>,
    index: HashMap<Vec<u64>, usize>,
    dim: usize,
}

impl ArmPool {
    pub fn new(dim: usize) -> Self {
        Self { arms: Vec::new(), index: HashMap::new(), dim }
    }

    pub fn from_arm_set(set: &ArmSet) -> Self {
        let mut pool = Self::new(set.dim());
        for a in set.arms() {
            pool.intern(a);
        }
        pool
    }

    pub fn intern(&mut self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim);
        let key = arm_key(x);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.arms.len();
        self.arms.push(x.to_vec());
        self.index.insert(key, i);
        i
    }

    pub fn get(&self, x: &[f64]) -> Option<usize> {
        self.index.get(&arm_key(x)).copied()
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &[f64] {
        &self.arms[i]
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Sparse nonnegative weights over arm indices, sorted by index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    entries: Vec<(usize, f64)>,
}

impl Allocation {
    /// Duplicate indices are summed and zero weights dropped.
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, w) in entries {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!("weight {w} for arm {i}")));
            }
            *map.entry(i).or_insert(0.0) += w;
        }
        Ok(Self { entries: map.into_iter().filter(|(_, w)| *w > 0.0).collect() })
    }

    pub fn from_dense(weights: &[f64]) -> Result<Self> {
        Self::new(weights.iter().copied().enumerate())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries.binary_search_by_key(&i, |(j, _)| *j).map(|k| self.entries[k].1).unwrap_or(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { entries: self.entries.iter().map(|&(i, w)| (i, w * factor)).filter(|(_, w)| *w > 0.0).collect() }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, w) in &self.entries {
            if i < n {
                out[i] = w;
            }
        }
        out
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|(i, _)| *i)
    }
}

/// `sum_x w_x x x^T` for bandit feedback, or its diagonal for semi-bandit feedback.
#[derive(Clone, Debug, PartialEq)]
pub enum DesignMatrix {
    Band(DMatrix<f64>),
    Semi(DVector<f64>),
}

impl DesignMatrix {
    pub fn accumulate<'a>(dim: usize, kind: FeedbackKind, terms: impl IntoIterator<Item = (&'a [f64], f64)>) -> Self {
        match kind {
            FeedbackKind::Bandit => {
                let mut a = DMatrix::zeros(dim, dim);
                for (x, w) in terms {
                    if w == 0.0 {
                        continue;
                    }
                    let v = DVector::from_column_slice(x);
                    a.ger(w, &v, &v, 1.0);
                }
                DesignMatrix::Band(a)
            }
            FeedbackKind::Semi => {
                let mut diag = DVector::zeros(dim);
                for (x, w) in terms {
                    for (k, v) in x.iter().enumerate() {
                        diag[k] += w * v * v;
                    }
                }
                DesignMatrix::Semi(diag)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DesignMatrix::Band(a) => a.nrows(),
            DesignMatrix::Semi(d) => d.len(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            DesignMatrix::Band(a) => a.clone(),
            DesignMatrix::Semi(d) => DMatrix::from_diagonal(d),
        }
    }

    /// Pseudo-inverse square root and related factors.
    pub fn root(&self) -> InvRoot {
        match self {
            DesignMatrix::Semi(d) => {
                let max = d.iter().cloned().fold(0.0f64, f64::max);
                let inv_sqrt: Vec<f64> =
                    d.iter().map(|&a| if a > EIG_REL_TOL * max && a > 0.0 { 1.0 / a.sqrt() } else { 0.0 }).collect();
                let rank = inv_sqrt.iter().filter(|v| **v > 0.0).count();
                InvRoot::Semi { diag: d.iter().copied().collect(), inv_sqrt, rank }
            }
            DesignMatrix::Band(a) => {
                let n = a.nrows();
                let eig = SymmetricEigen::new(a.clone());
                let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
                let evals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                let mut rank = 0;
                let mut s = vec![0.0; n];
                for (k, &e) in evals.iter().enumerate() {
                    if e > EIG_REL_TOL * max && e > 0.0 {
                        s[k] = 1.0 / e.sqrt();
                        rank += 1;
                    }
                }
                let q = eig.eigenvectors;
                let mut b = DMatrix::zeros(n, n);
                let mut pinv = DMatrix::zeros(n, n);
                let mut proj = DMatrix::zeros(n, n);
                for (k, sk) in s.iter().enumerate() {
                    if *sk == 0.0 {
                        continue;
                    }
                    let col = q.column(k);
                    b.ger(*sk, &col, &col, 1.0);
                    pinv.ger(sk * sk, &col, &col, 1.0);
                    proj.ger(1.0, &col, &col, 1.0);
                }
                InvRoot::Band { q, evals, inv_sqrt: s, b, pinv, proj, rank }
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.root().rank()
    }

    /// Errors unless the matrix has full rank.
    pub fn require_invertible(&self) -> Result<()> {
        let rank = self.rank();
        if rank < self.dim() {
            return Err(Error::SingularDesign { rank, dim: self.dim() });
        }
        Ok(())
    }
}

/// Factors of the pseudo-inverse of a design matrix.
#[derive(Clone, Debug)]
pub enum InvRoot {
    Semi {
        diag: Vec<f64>,
        inv_sqrt: Vec<f64>,
        rank: usize,
    },
    Band {
        q: DMatrix<f64>,
        evals: Vec<f64>,
        inv_sqrt: Vec<f64>,
        b: DMatrix<f64>,
        pinv: DMatrix<f64>,
        proj: DMatrix<f64>,
        rank: usize,
    },
}

impl InvRoot {
    pub fn rank(&self) -> usize {
        match self {
            InvRoot::Semi { rank, .. } | InvRoot::Band { rank, .. } => *rank,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InvRoot::Semi { diag, .. } => diag.len(),
            InvRoot::Band { evals, .. } => evals.len(),
        }
    }

    /// `out = A^{+1/2} eta`.
    pub fn apply(&self, eta: &[f64], out: &mut [f64]) {
        match self {
            InvRoot::Semi { inv_sqrt, .. } => {
                for ((o, e), s) in out.iter_mut().zip(eta).zip(inv_sqrt) {
                    *o = e * s;
                }
            }
            InvRoot::Band { b, .. } => {
                let n = b.nrows();
                for (i, o) in out.iter_mut().enumerate().take(n) {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += b[(i, j)] * eta[j];
                    }
                    *o = acc;
                }
            }
        }
    }

    /// `x^T A^+ x`.
    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        match self {
            InvRoot::Semi { inv_sqrt, .. } => x.iter().zip(inv_sqrt).map(|(v, s)| v * v * s * s).sum(),
            InvRoot::Band { pinv, .. } => {
                let v = DVector::from_column_slice(x);
                v.dot(&(pinv * &v))
            }
        }
    }

    /// Whether `x` lies in the range of the matrix.
    pub fn in_range(&self, x: &[f64]) -> bool {
        match self {
            InvRoot::Semi { inv_sqrt, .. } => x.iter().zip(inv_sqrt).all(|(v, s)| *v == 0.0 || *s > 0.0),
            InvRoot::Band { proj, .. } => {
                let v = DVector::from_column_slice(x);
                let r = &v - proj * &v;
                r.norm() <= 1e-9 * v.norm().max(1.0)
            }
        }
    }

    pub fn require_range(&self, dirs: &[Vec<f64>]) -> Result<()> {
        if dirs.iter().all(|d| self.in_range(d)) {
            Ok(())
        } else {
            Err(Error::SingularDesign { rank: self.rank(), dim: self.dim() })
        }
    }
}

/// Builds the design matrix of `alloc` over `arms`.
pub fn design_matrix(arms: &[Vec<f64>], alloc: &Allocation, kind: FeedbackKind) -> Result<DesignMatrix> {
    let Some(first) = arms.first() else {
        return Err(Error::InvalidInput("no arms".into()));
    };
    if let Some(i) = alloc.max_index() {
        if i >= arms.len() {
            return Err(Error::InvalidInput(format!("allocation index {i} out of range")));
        }
    }
    if kind == FeedbackKind::Semi {
        if let Some(&(i, _)) = alloc.entries().iter().find(|(i, _)| !is_binary(&arms[*i])) {
            return Err(Error::InvalidInput(format!("semi-bandit arm {i} is not binary")));
        }
    }
    Ok(DesignMatrix::accumulate(first.len(), kind, alloc.entries().iter().map(|&(i, w)| (arms[i].as_slice(), w))))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Bandit(f64),
    /// `(coordinate, reward)` for every active coordinate.
    Semi(Vec<(usize, f64)>),
}

/// Aggregated rewards of `n` pulls of one arm.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchObservation {
    Bandit { n: u64, sum: f64 },
    Semi { n: u64, sums: Vec<(usize, f64)> },
}

pub fn sample_feedback<R: Rng + ?Sized>(
    theta: &[f64],
    arm: &[f64],
    kind: FeedbackKind,
    rng: &mut R,
) -> Result<Observation> {
    check_pull(theta, arm, kind)?;
    Ok(match kind {
        FeedbackKind::Bandit => {
            let z: f64 = rng.sample(StandardNormal);
            Observation::Bandit(dot(arm, theta) + z)
        }
        FeedbackKind::Semi => Observation::Semi(
            support(arm)
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    (i, theta[i] + z)
                })
                .collect(),
        ),
    })
}

/// Sums of `n` independent pulls, drawn in one shot (a sum of `n` unit
/// Gaussians is Gaussian with variance `n`).
pub fn sample_batch<R: Rng + ?Sized>(
    theta: &[f64],
    arm: &[f64],
    kind: FeedbackKind,
    n: u64,
    rng: &mut R,
) -> Result<BatchObservation> {
    check_pull(theta, arm, kind)?;
    let nf = n as f64;
    let sd = nf.sqrt();
    Ok(match kind {
        FeedbackKind::Bandit => {
            let z: f64 = if n == 0 { 0.0 } else { rng.sample(StandardNormal) };
            BatchObservation::Bandit { n, sum: nf * dot(arm, theta) + sd * z }
        }
        FeedbackKind::Semi => BatchObservation::Semi {
            n,
            sums: support(arm)
                .map(|i| {
                    let z: f64 = if n == 0 { 0.0 } else { rng.sample(StandardNormal) };
                    (i, nf * theta[i] + sd * z)
                })
                .collect(),
        },
    })
}

fn check_pull(theta: &[f64], arm: &[f64], kind: FeedbackKind) -> Result<()> {
    if theta.len() != arm.len() {
        return Err(Error::InvalidInput(format!(
            "arm dimension {} does not match theta dimension {}",
            arm.len(),
            theta.len()
        )));
    }
    if kind == FeedbackKind::Semi && !is_binary(arm) {
        return Err(Error::InvalidInput("semi-bandit arm is not binary".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub theta: Vec<f64>,
    /// Bandit: the Gram matrix was singular and a tiny ridge was added.
    pub regularized: bool,
    /// Semi-bandit: coordinates never observed (estimate left at 0).
    pub unobserved: Vec<usize>,
}

/// Sufficient statistics for either estimator.
#[derive(Clone, Debug)]
pub enum Stats {
    Bandit { gram: DMatrix<f64>, xy: DVector<f64>, pulls: u64 },
    Semi { sums: Vec<f64>, counts: Vec<u64> },
}

impl Stats {
    pub fn new(dim: usize, kind: FeedbackKind) -> Self {
        match kind {
            FeedbackKind::Bandit => Stats::Bandit { gram: DMatrix::zeros(dim, dim), xy: DVector::zeros(dim), pulls: 0 },
            FeedbackKind::Semi => Stats::Semi { sums: vec![0.0; dim], counts: vec![0; dim] },
        }
    }

    pub fn add(&mut self, arm: &[f64], obs: &Observation) -> Result<()> {
        match obs {
            Observation::Bandit(y) => self.add_batch(arm, &BatchObservation::Bandit { n: 1, sum: *y }),
            Observation::Semi(v) => self.add_batch(arm, &BatchObservation::Semi { n: 1, sums: v.clone() }),
        }
    }

    pub fn add_batch(&mut self, arm: &[f64], obs: &BatchObservation) -> Result<()> {
        match (self, obs) {
            (Stats::Bandit { gram, xy, pulls }, BatchObservation::Bandit { n, sum }) => {
                let v = DVector::from_column_slice(arm);
                gram.ger(*n as f64, &v, &v, 1.0);
                xy.axpy(*sum, &v, 1.0);
                *pulls += n;
                Ok(())
            }
            (Stats::Semi { sums, counts }, BatchObservation::Semi { n, sums: s }) => {
                for &(i, y) in s {
                    sums[i] += y;
                    counts[i] += n;
                }
                Ok(())
            }
            _ => Err(Error::InvalidInput("observation kind does not match statistics".into())),
        }
    }

    pub fn estimate(&self) -> Estimate {
        match self {
            Stats::Bandit { gram, xy, .. } => {
                let d = gram.nrows();
                let singular = DesignMatrix::Band(gram.clone()).rank() < d;
                let mut g = gram.clone();
                if singular {
                    for i in 0..d {
                        g[(i, i)] += SINGULAR_RIDGE;
                    }
                }
                let theta = match g.clone().cholesky() {
                    Some(c) => c.solve(xy),
                    None => g.pseudo_inverse(1e-14).map(|p| p * xy).unwrap_or_else(|_| DVector::zeros(d)),
                };
                Estimate { theta: theta.iter().copied().collect(), regularized: singular, unobserved: Vec::new() }
            }
            Stats::Semi { sums, counts } => {
                let mut unobserved = Vec::new();
                let theta = sums
                    .iter()
                    .zip(counts)
                    .enumerate()
                    .map(|(i, (s, &c))| {
                        if c == 0 {
                            unobserved.push(i);
                            0.0
                        } else {
                            s / c as f64
                        }
                    })
                    .collect();
                Estimate { theta, regularized: false, unobserved }
            }
        }
    }
}

/// Ordinary least squares over `(arm, observation)` pairs.
pub fn least_squares_estimate(dim: usize, data: &[(Vec<f64>, Observation)]) -> Result<Estimate> {
    let mut stats = Stats::new(dim, FeedbackKind::Bandit);
    for (x, y) in data {
        stats.add(x, y)?;
    }
    Ok(stats.estimate())
}

/// Per-coordinate sample means over `(arm, observation)` pairs.
pub fn coordinate_estimate(dim: usize, data: &[(Vec<f64>, Observation)]) -> Result<Estimate> {
    let mut stats = Stats::new(dim, FeedbackKind::Semi);
    for (x, y) in data {
        stats.add(x, y)?;
    }
    Ok(stats.estimate())
}

/// Gap of each arm to the unique best arm; returns `(best index, gaps)`.
pub fn true_gaps(arms: &[Vec<f64>], theta: &[f64]) -> Result<(usize, Vec<f64>)> {
    if arms.is_empty() {
        return Err(Error::InvalidInput("no arms".into()));
    }
    if arms.iter().any(|a| a.len() != theta.len()) {
        return Err(Error::InvalidInput("theta dimension does not match arms".into()));
    }
    let values: Vec<f64> = arms.iter().map(|a| dot(a, theta)).collect();
    let best = argmax_by(values.iter().copied());
    let top = values[best];
    if values.iter().enumerate().any(|(i, v)| i != best && (top - v).abs() <= TIE_TOL) {
        return Err(Error::NonUniqueOptimum);
    }
    Ok((best, values.iter().map(|v| top - v).collect()))
}

/// Upper bound on the largest gap for `|theta_i| <= 1`.
pub fn delta_max_upper_bound(dim: usize, diameter: f64) -> f64 {
    (dim as f64).sqrt() * diameter
}

/// Per-step cumulative regret of one run, plus pull counts per arm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretTrace {
    pub cum_regret: Vec<f64>,
    pub pulls: BTreeMap<usize, u64>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.cum_regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum_regret.is_empty()
    }

    /// `(step, cum_regret)` every `stride` steps (1-based), always ending at the last step.
    pub fn strided(&self, stride: usize) -> Vec<(u64, f64)> {
        let stride = stride.max(1);
        let n = self.cum_regret.len();
        let mut out: Vec<(u64, f64)> =
            (stride..=n).step_by(stride).map(|t| (t as u64, self.cum_regret[t - 1])).collect();
        if n > 0 && out.last().map(|(t, _)| *t as usize) != Some(n) {
            out.push((n as u64, self.cum_regret[n - 1]));
        }
        out
    }
}

/// Deterministic RNG for the stream named by `(seed, label, index)`.
pub fn stream_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}
