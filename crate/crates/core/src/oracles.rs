//! Linear maximization oracles, benchmark instance construction, the
//! minimum-gap routine and coordinate covering.
//!
//! Cost vectors may contain `+inf` / `-inf`. Oracles track the number of
//! infinite terms separately from the finite part of `x^T v`, so a forced
//! coordinate never swamps the finite comparison.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, stream_rng, true_gaps, ArmSet, TIE_TOL};

/// Classes with at most this many arms are materialized for enumeration.
pub const ENUMERATION_LIMIT: usize = 4096;

/// `x^T v` split into a signed count of infinite terms and a finite remainder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtValue {
    pub inf: f64,
    pub fin: f64,
}

impl ExtValue {
    pub fn of(x: &[f64], v: &[f64]) -> Self {
        let mut out = ExtValue { inf: 0.0, fin: 0.0 };
        for (xi, vi) in x.iter().zip(v) {
            if *xi == 0.0 {
                continue;
            }
            if vi.is_infinite() {
                out.inf += xi * vi.signum();
            } else {
                out.fin += xi * vi;
            }
        }
        out
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.inf
            .partial_cmp(&other.inf)
            .unwrap_or(Ordering::Equal)
            .then(self.fin.partial_cmp(&other.fin).unwrap_or(Ordering::Equal))
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Returns an arm maximizing `x^T v` over a fixed class.
pub trait LinMaxOracle: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Maximizer with ties broken toward the lexicographically smallest arm
    /// (lowest index for explicit sets). `v` has already been validated.
    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64>;

    /// All arms in canonical order, if the class is small enough to list.
    fn enumerate(&self) -> Option<Vec<Vec<f64>>>;

    fn is_binary(&self) -> bool;

    /// Upper bound on the Euclidean diameter of the class.
    fn diameter_bound(&self) -> f64;

    fn argmax(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!("cost vector has dimension {}, expected {}", v.len(), self.dim())));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("cost vector contains NaN".into()));
        }
        if v.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::InfeasibleQuery);
        }
        let x = self.argmax_unchecked(v);
        if ExtValue::of(&x, v).inf < 0.0 {
            return Err(Error::InfeasibleQuery);
        }
        Ok(x)
    }
}

/// Brute force over an explicit arm list.
#[derive(Clone, Debug)]
pub struct EnumeratedOracle {
    arms: ArmSet,
    binary: bool,
}

impl EnumeratedOracle {
    pub fn new(arms: ArmSet) -> Self {
        let binary = arms.is_binary();
        Self { arms, binary }
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }

    pub fn argmax_index(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = ExtValue::of(self.arms.arm(0), v);
        for (i, a) in self.arms.arms().iter().enumerate().skip(1) {
            let val = ExtValue::of(a, v);
            if val.cmp(&best_v) == Ordering::Greater {
                best = i;
                best_v = val;
            }
        }
        best
    }
}

impl LinMaxOracle for EnumeratedOracle {
    fn dim(&self) -> usize {
        self.arms.dim()
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        self.arms.arm(self.argmax_index(v)).to_vec()
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.arms.arms().to_vec())
    }

    fn is_binary(&self) -> bool {
        self.binary
    }

    fn diameter_bound(&self) -> f64 {
        self.arms.diameter()
    }
}

/// Indicator of the `k` largest entries of `v`; ties prefer higher indices,
/// which yields the lexicographically smallest maximizer.
fn top_k_indicator(v: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(b.cmp(&a)));
    let mut x = vec![0.0; v.len()];
    for &i in idx.iter().take(k) {
        x[i] = 1.0;
    }
    x
}

fn combinations(n: usize, k: usize) -> Vec<Vec<f64>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if k == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..=n - k {
            cur[i] = 1.0;
            rec(i + 1, n, k - 1, cur, out);
            cur[i] = 0.0;
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut vec![0.0; n], &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn sorted_lex(mut arms: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    arms.sort_by(|a, b| lex_cmp(a, b));
    arms
}

/// All subsets of size `k` of `m` coordinates.
#[derive(Clone, Debug)]
pub struct TopKOracle {
    pub m: usize,
    pub k: usize,
}

impl LinMaxOracle for TopKOracle {
    fn dim(&self) -> usize {
        self.m
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        top_k_indicator(v, self.k)
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        (binomial(self.m, self.k) <= ENUMERATION_LIMIT as u128).then(|| sorted_lex(combinations(self.m, self.k)))
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn diameter_bound(&self) -> f64 {
        (2.0 * self.k.min(self.m - self.k) as f64).sqrt()
    }
}

/// Top-`k` of the first `m` coordinates times top-`l` of the next `n`.
#[derive(Clone, Debug)]
pub struct ProductTopKOracle {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub l: usize,
}

impl LinMaxOracle for ProductTopKOracle {
    fn dim(&self) -> usize {
        self.m + self.n
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let mut x = top_k_indicator(&v[..self.m], self.k);
        x.extend(top_k_indicator(&v[self.m..], self.l));
        x
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        let count = binomial(self.m, self.k).saturating_mul(binomial(self.n, self.l));
        if count > ENUMERATION_LIMIT as u128 {
            return None;
        }
        let left = combinations(self.m, self.k);
        let right = combinations(self.n, self.l);
        let mut arms = Vec::with_capacity(count as usize);
        for a in &left {
            for b in &right {
                let mut x = a.clone();
                x.extend_from_slice(b);
                arms.push(x);
            }
        }
        Some(sorted_lex(arms))
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn diameter_bound(&self) -> f64 {
        (2.0 * (self.k.min(self.m - self.k) + self.l.min(self.n - self.l)) as f64).sqrt()
    }
}

/// Top-`k` subsets of `d` coordinates plus the all-ones arm.
#[derive(Clone, Debug)]
pub struct TopKPlusOnesOracle {
    pub d: usize,
    pub k: usize,
}

impl LinMaxOracle for TopKPlusOnesOracle {
    fn dim(&self) -> usize {
        self.d
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let top = top_k_indicator(v, self.k);
        let ones = vec![1.0; self.d];
        match ExtValue::of(&top, v).cmp(&ExtValue::of(&ones, v)) {
            Ordering::Greater => top,
            Ordering::Less => ones,
            Ordering::Equal => {
                if lex_cmp(&top, &ones) == Ordering::Greater {
                    ones
                } else {
                    top
                }
            }
        }
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        if binomial(self.d, self.k) >= ENUMERATION_LIMIT as u128 {
            return None;
        }
        let mut arms = combinations(self.d, self.k);
        if self.k < self.d {
            arms.push(vec![1.0; self.d]);
        }
        Some(sorted_lex(arms))
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn diameter_bound(&self) -> f64 {
        let within = 2.0 * self.k.min(self.d - self.k) as f64;
        within.max((self.d - self.k) as f64).sqrt()
    }
}

/// Arms `(S, S)` in `{0,1}^{2d}` for every subset `S` of `d` items.
#[derive(Clone, Debug)]
pub struct ResourceAllocationOracle {
    pub d: usize,
}

impl LinMaxOracle for ResourceAllocationOracle {
    fn dim(&self) -> usize {
        2 * self.d
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut x = vec![0.0; 2 * d];
        for i in 0..d {
            let item = ExtValue::of(&[1.0, 1.0], &[v[i], v[d + i]]);
            if item.cmp(&ExtValue { inf: 0.0, fin: 0.0 }) == Ordering::Greater {
                x[i] = 1.0;
                x[d + i] = 1.0;
            }
        }
        x
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        if self.d >= 13 {
            return None;
        }
        let d = self.d;
        let arms = (0u32..1 << d)
            .map(|mask| {
                let mut x = vec![0.0; 2 * d];
                for i in 0..d {
                    if mask >> i & 1 == 1 {
                        x[i] = 1.0;
                        x[d + i] = 1.0;
                    }
                }
                x
            })
            .collect();
        Some(sorted_lex(arms))
    }

    fn is_binary(&self) -> bool {
        true
    }

    fn diameter_bound(&self) -> f64 {
        (2.0 * self.d as f64).sqrt()
    }
}

/// Declarative description of a benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Explicit {
        arms: Vec<Vec<f64>>,
        theta: Vec<f64>,
    },
    TopK {
        m: usize,
        k: usize,
        #[serde(default)]
        theta: Option<Vec<f64>>,
        #[serde(default)]
        theta_seed: Option<u64>,
    },
    ProductTopK {
        m: usize,
        k: usize,
        n: usize,
        l: usize,
        #[serde(default)]
        theta: Option<Vec<f64>>,
        #[serde(default)]
        theta_seed: Option<u64>,
    },
    TopKPlusOnes {
        d: usize,
        k: usize,
        #[serde(default)]
        theta: Option<Vec<f64>>,
        #[serde(default)]
        theta_seed: Option<u64>,
    },
    ResourceAllocation {
        d: usize,
        #[serde(default)]
        prices: Option<Vec<f64>>,
        #[serde(default)]
        costs: Option<Vec<f64>>,
        #[serde(default)]
        seed: Option<u64>,
    },
    EndOfOptimism {
        eps: f64,
    },
    OptimismCounterexample {
        m: usize,
        eps: f64,
    },
}

/// Uniform [0,1) draws from the named stream.
fn uniform_vector(seed: u64, label: &str, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, label, 0);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn theta_or_default(theta: &Option<Vec<f64>>, seed: &Option<u64>, dim: usize) -> Result<Vec<f64>> {
    let theta = match theta {
        Some(t) => t.clone(),
        None => uniform_vector(seed.unwrap_or(0), "theta", dim),
    };
    if theta.len() != dim {
        return Err(Error::InvalidSpec(format!("theta has length {}, expected {dim}", theta.len())));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("theta has a non-finite entry".into()));
    }
    Ok(theta)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidSpec(format!("eps = {eps} must lie in (0, 1)")));
    }
    Ok(())
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// A bandit problem: true parameter, arm class and its oracle.
#[derive(Clone, Debug)]
pub struct Instance {
    spec: InstanceSpec,
    theta: Vec<f64>,
    oracle: Arc<dyn LinMaxOracle>,
    arms: Option<ArmSet>,
    best_arm: Vec<f64>,
    best_value: f64,
    gaps: Option<Vec<f64>>,
}

impl Instance {
    /// Instance from an explicit arm list (no spec round trip).
    pub fn explicit(arms: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        build_instance(&InstanceSpec::Explicit { arms, theta })
    }

    pub fn spec(&self) -> &InstanceSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta
    }

    pub fn oracle(&self) -> &dyn LinMaxOracle {
        self.oracle.as_ref()
    }

    pub fn oracle_arc(&self) -> Arc<dyn LinMaxOracle> {
        self.oracle.clone()
    }

    /// The materialized arm list, when the class is small enough.
    pub fn arm_set(&self) -> Option<&ArmSet> {
        self.arms.as_ref()
    }

    pub fn require_arm_set(&self) -> Result<&ArmSet> {
        self.arms.as_ref().ok_or_else(|| Error::NotEnumerable(format!("{:?}", self.spec)))
    }

    pub fn best_arm(&self) -> &[f64] {
        &self.best_arm
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    /// Expected regret of one pull of `arm`.
    pub fn regret(&self, arm: &[f64]) -> f64 {
        self.best_value - dot(arm, &self.theta)
    }

    /// Gaps aligned with [`Instance::arm_set`].
    pub fn true_gaps(&self) -> Result<&[f64]> {
        self.gaps.as_deref().ok_or_else(|| Error::NotEnumerable(format!("{:?}", self.spec)))
    }

    pub fn delta_min(&self) -> Result<f64> {
        Ok(self.true_gaps()?.iter().copied().filter(|g| *g > 0.0).fold(f64::INFINITY, f64::min))
    }

    /// Largest gap; exact for enumerable classes.
    pub fn delta_max(&self) -> Result<f64> {
        Ok(self.true_gaps()?.iter().copied().fold(0.0, f64::max))
    }

    /// `sqrt(d) * diameter`, valid whenever every `|theta_i| <= 1`.
    pub fn delta_max_bound(&self) -> f64 {
        let diam = match &self.arms {
            Some(a) => a.diameter(),
            None => self.oracle.diameter_bound(),
        };
        crate::model::delta_max_upper_bound(self.dim(), diam)
    }
}

/// Builds the instance and its oracle from a spec.
pub fn build_instance(spec: &InstanceSpec) -> Result<Instance> {
    let (theta, oracle): (Vec<f64>, Arc<dyn LinMaxOracle>) = match spec {
        InstanceSpec::Explicit { arms, theta } => {
            let set = ArmSet::new(arms.clone()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let theta = theta_or_default(&Some(theta.clone()), &None, set.dim())?;
            (theta, Arc::new(EnumeratedOracle::new(set)))
        }
        InstanceSpec::TopK { m, k, theta, theta_seed } => {
            if *k == 0 || k > m {
                return Err(Error::InvalidSpec(format!("top-k needs 0 < k <= m, got k={k}, m={m}")));
            }
            (theta_or_default(theta, theta_seed, *m)?, Arc::new(TopKOracle { m: *m, k: *k }))
        }
        InstanceSpec::ProductTopK { m, k, n, l, theta, theta_seed } => {
            if *k == 0 || k > m || *l == 0 || l > n {
                return Err(Error::InvalidSpec(format!(
                    "product top-k needs 0 < k <= m and 0 < l <= n, got ({m},{k},{n},{l})"
                )));
            }
            (theta_or_default(theta, theta_seed, m + n)?, Arc::new(ProductTopKOracle { m: *m, k: *k, n: *n, l: *l }))
        }
        InstanceSpec::TopKPlusOnes { d, k, theta, theta_seed } => {
            if *k == 0 || k >= d {
                return Err(Error::InvalidSpec(format!("top-k plus ones needs 0 < k < d, got k={k}, d={d}")));
            }
            (theta_or_default(theta, theta_seed, *d)?, Arc::new(TopKPlusOnesOracle { d: *d, k: *k }))
        }
        InstanceSpec::ResourceAllocation { d, prices, costs, seed } => {
            if *d == 0 {
                return Err(Error::InvalidSpec("resource allocation needs d > 0".into()));
            }
            let seed = seed.unwrap_or(0);
            let prices = prices.clone().unwrap_or_else(|| uniform_vector(seed, "prices", *d));
            let costs = costs.clone().unwrap_or_else(|| uniform_vector(seed, "costs", *d));
            if prices.len() != *d || costs.len() != *d {
                return Err(Error::InvalidSpec("prices and costs must both have length d".into()));
            }
            let mut theta = prices;
            theta.extend(costs.iter().map(|c| -c));
            let theta = theta_or_default(&Some(theta), &None, 2 * d)?;
            (theta, Arc::new(ResourceAllocationOracle { d: *d }))
        }
        InstanceSpec::EndOfOptimism { eps } => {
            check_eps(*eps)?;
            let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0 - eps, 8.0 * eps]];
            (vec![1.0, 0.0], Arc::new(EnumeratedOracle::new(ArmSet::new(arms)?)))
        }
        InstanceSpec::OptimismCounterexample { m, eps } => {
            check_eps(*eps)?;
            let r = (*m as f64).sqrt().round() as usize;
            if *m < 2 || r * r != *m {
                return Err(Error::InvalidSpec(format!("m = {m} must be a perfect square >= 4")));
            }
            let d = 2 * m + r;
            let mut theta = vec![0.0; d];
            // 1-based: theta_1 = 1, theta_2..m = 1-eps, theta_{m+1..2m-1} = -1+eps, rest -1
            theta[0] = 1.0;
            for t in theta.iter_mut().take(*m).skip(1) {
                *t = 1.0 - eps;
            }
            for t in theta.iter_mut().take(2 * m - 1).skip(*m) {
                *t = -1.0 + eps;
            }
            for t in theta.iter_mut().skip(2 * m - 1) {
                *t = -1.0;
            }
            let mut arms: Vec<Vec<f64>> = (0..*m).map(|i| unit(d, i)).collect();
            arms.push(vec![1.0; d]);
            (theta, Arc::new(EnumeratedOracle::new(ArmSet::new(arms)?)))
        }
    };
    finish_instance(spec.clone(), theta, oracle)
}

fn finish_instance(spec: InstanceSpec, theta: Vec<f64>, oracle: Arc<dyn LinMaxOracle>) -> Result<Instance> {
    let arms = oracle.enumerate().map(ArmSet::new).transpose()?;
    let (best_arm, gaps) = match &arms {
        Some(set) => {
            let (best, gaps) = true_gaps(set.arms(), &theta)?;
            (set.arm(best).to_vec(), Some(gaps))
        }
        None => {
            let (gap, leader) = mingap_complete(&theta, oracle.as_ref())?;
            if gap <= TIE_TOL {
                return Err(Error::NonUniqueOptimum);
            }
            (leader, None)
        }
    };
    let best_value = dot(&best_arm, &theta);
    Ok(Instance { spec, theta, oracle, arms, best_arm, best_value, gaps })
}

fn second_best_gap(theta: &[f64], oracle: &dyn LinMaxOracle) -> Result<(f64, Vec<f64>)> {
    let arms = oracle.enumerate().ok_or_else(|| Error::NotEnumerable("non-binary class without enumeration".into()))?;
    let values: Vec<f64> = arms.iter().map(|a| dot(a, theta)).collect();
    let best = crate::model::argmax_by(values.iter().copied());
    let gap = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, v)| (values[best] - v).max(0.0))
        .fold(f64::INFINITY, f64::min);
    Ok((gap, arms[best].clone()))
}

fn masked_gap(theta: &[f64], oracle: &dyn LinMaxOracle, leader: &[f64], coord: usize, force: f64) -> Result<f64> {
    let mut v = theta.to_vec();
    v[coord] = force;
    match oracle.argmax(&v) {
        Ok(alt) => {
            // The class has no arm that differs from the leader at `coord`.
            if (alt[coord] != 0.0) == (leader[coord] != 0.0) {
                return Ok(f64::INFINITY);
            }
            Ok((dot(leader, theta) - dot(&alt, theta)).max(0.0))
        }
        Err(Error::InfeasibleQuery) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Empirical gap between the leader and the best arm that drops one of the
/// leader's coordinates (one oracle call per leader coordinate).
///
/// Non-binary classes fall back to the exact second-best gap by enumeration.
pub fn mingap(theta: &[f64], oracle: &dyn LinMaxOracle) -> Result<(f64, Vec<f64>)> {
    if !oracle.is_binary() {
        return second_best_gap(theta, oracle);
    }
    let leader = oracle.argmax(theta)?;
    if leader.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput("leader has empty support".into()));
    }
    let mut gap = f64::INFINITY;
    for i in crate::model::support(&leader) {
        gap = gap.min(masked_gap(theta, oracle, &leader, i, f64::NEG_INFINITY)?);
    }
    Ok((gap, leader))
}

/// Exact gap between the best and second-best arm: masks each leader
/// coordinate and also forces each coordinate outside the leader, so strict
/// supersets of the leader are compared too (at most `d + 1` oracle calls).
pub fn mingap_complete(theta: &[f64], oracle: &dyn LinMaxOracle) -> Result<(f64, Vec<f64>)> {
    if !oracle.is_binary() {
        return second_best_gap(theta, oracle);
    }
    let leader = oracle.argmax(theta)?;
    let mut gap = f64::INFINITY;
    for i in 0..theta.len() {
        let force = if leader[i] != 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
        gap = gap.min(masked_gap(theta, oracle, &leader, i, force)?);
    }
    Ok((gap, leader))
}

/// One arm per coordinate containing it, deduplicated, in coordinate order.
pub fn cover_coordinates(oracle: &dyn LinMaxOracle) -> Result<Vec<Vec<f64>>> {
    let d = oracle.dim();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = vec![0.0; d];
        v[i] = f64::INFINITY;
        let x = oracle.argmax(&v)?;
        if x[i] == 0.0 {
            return Err(Error::Coverage { coord: i });
        }
        if !out.contains(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute(arms: &[Vec<f64>], v: &[f64]) -> f64 {
        arms.iter().map(|a| dot(a, v)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn top_k_sort_and_take() {
        let o = TopKOracle { m: 4, k: 2 };
        assert_eq!(o.argmax(&[3.0, 1.0, 2.0, 0.0]).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn explicit_pick() {
        let inst = Instance::explicit(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(inst.oracle().argmax(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn structured_oracles_match_enumeration() {
        let oracles: Vec<Box<dyn LinMaxOracle>> = vec![
            Box::new(TopKOracle { m: 6, k: 3 }),
            Box::new(ProductTopKOracle { m: 3, k: 1, n: 3, l: 2 }),
            Box::new(TopKPlusOnesOracle { d: 6, k: 2 }),
            Box::new(ResourceAllocationOracle { d: 4 }),
        ];
        let mut rng = stream_rng(11, "oracle-test", 0);
        for o in &oracles {
            let arms = o.enumerate().unwrap();
            let enumerated = EnumeratedOracle::new(ArmSet::new(arms.clone()).unwrap());
            for _ in 0..1000 {
                let v: Vec<f64> = (0..o.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x = o.argmax(&v).unwrap();
                assert!(arms.contains(&x));
                assert_eq!(dot(&x, &v), brute(&arms, &v));
                assert_eq!(x, enumerated.argmax(&v).unwrap());
            }
        }
        assert_eq!(ProductTopKOracle { m: 3, k: 1, n: 3, l: 2 }.enumerate().unwrap().len(), 9);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let o = TopKOracle { m: 3, k: 1 };
        assert_eq!(o.argmax(&[1.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        let r = ResourceAllocationOracle { d: 2 };
        assert_eq!(r.argmax(&[0.5, 0.2, -0.5, -0.1]).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn all_negative_infinity_is_infeasible() {
        let o = TopKOracle { m: 3, k: 1 };
        assert_eq!(o.argmax(&[f64::NEG_INFINITY; 3]), Err(Error::InfeasibleQuery));
        let e = EnumeratedOracle::new(ArmSet::new(vec![vec![1.0, 1.0]]).unwrap());
        assert_eq!(e.argmax(&[f64::NEG_INFINITY, 0.0]), Err(Error::InfeasibleQuery));
    }

    #[test]
    fn forced_coordinate_keeps_finite_order() {
        let o = TopKOracle { m: 4, k: 2 };
        let x = o.argmax(&[f64::INFINITY, 0.1, 0.3, 0.2]).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn end_of_optimism_arms() {
        let inst = build_instance(&InstanceSpec::EndOfOptimism { eps: 0.01 }).unwrap();
        let arms = inst.arm_set().unwrap().arms();
        assert_eq!(arms[0], vec![1.0, 0.0]);
        assert_eq!(arms[1], vec![0.0, 1.0]);
        assert_eq!(arms[2], vec![0.99, 0.08]);
        assert_eq!(inst.theta_star(), &[1.0, 0.0]);
    }

    #[test]
    fn counterexample_gaps() {
        let inst = build_instance(&InstanceSpec::OptimismCounterexample { m: 4, eps: 0.5 }).unwrap();
        let gaps = inst.true_gaps().unwrap();
        assert_eq!(gaps.len(), 5);
        assert_eq!(gaps[0], 0.0);
        for g in &gaps[1..4] {
            assert!((g - 0.5).abs() < 1e-15);
        }
        assert!((gaps[4] - 3.0).abs() < 1e-12);
        let inst = build_instance(&InstanceSpec::OptimismCounterexample { m: 16, eps: 0.2 }).unwrap();
        assert_eq!(inst.dim(), 36);
        assert!((inst.delta_min().unwrap() - 0.2).abs() < 1e-12);
        assert!((inst.delta_max().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_best_arm_for_sorted_theta() {
        let theta = vec![0.9, 0.7, 0.5, 0.3, 0.1];
        let inst = build_instance(&InstanceSpec::TopK { m: 5, k: 2, theta: Some(theta), theta_seed: None }).unwrap();
        assert_eq!(inst.best_arm(), &[1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            InstanceSpec::TopK { m: 3, k: 4, theta: None, theta_seed: None },
            InstanceSpec::EndOfOptimism { eps: 1.5 },
            InstanceSpec::OptimismCounterexample { m: 5, eps: 0.1 },
            InstanceSpec::ResourceAllocation { d: 2, prices: Some(vec![1.0]), costs: None, seed: None },
        ] {
            assert!(matches!(build_instance(&spec), Err(Error::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn resource_allocation_prices_and_costs() {
        let spec = InstanceSpec::ResourceAllocation {
            d: 2,
            prices: Some(vec![0.8, 0.1]),
            costs: Some(vec![0.3, 0.4]),
            seed: None,
        };
        let inst = build_instance(&spec).unwrap();
        assert_eq!(inst.theta_star(), &[0.8, 0.1, -0.3, -0.4]);
        assert_eq!(inst.best_arm(), &[1.0, 0.0, 1.0, 0.0]);
        assert!((inst.best_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mingap_three_singletons() {
        let o = EnumeratedOracle::new(
            ArmSet::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(),
        );
        let (gap, leader) = mingap(&[1.0, 0.4, 0.1], &o).unwrap();
        assert!((gap - 0.6).abs() < 1e-15);
        assert_eq!(leader, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn mingap_tie_is_zero() {
        let o = TopKOracle { m: 3, k: 1 };
        let (gap, _) = mingap(&[0.5, 0.5, 0.1], &o).unwrap();
        assert_eq!(gap, 0.0);
    }

    /// Direct simulation of the masking loop against an explicit arm list.
    fn masking_oracle(arms: &[Vec<f64>], theta: &[f64], complete: bool) -> f64 {
        let values: Vec<f64> = arms.iter().map(|a| dot(a, theta)).collect();
        let lead = crate::model::argmax_by(values.iter().copied());
        let mut best = f64::INFINITY;
        for i in 0..theta.len() {
            let inside = arms[lead][i] != 0.0;
            if !inside && !complete {
                continue;
            }
            let alt = arms
                .iter()
                .enumerate()
                .filter(|(_, a)| (a[i] != 0.0) != inside)
                .map(|(j, _)| values[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if alt.is_finite() {
                best = best.min(values[lead] - alt);
            }
        }
        best
    }

    #[test]
    fn mingap_matches_masking_simulation() {
        let mut rng = stream_rng(5, "mingap-test", 0);
        let o = ProductTopKOracle { m: 4, k: 2, n: 3, l: 1 };
        let arms = o.enumerate().unwrap();
        let r = ResourceAllocationOracle { d: 3 };
        let rarms = r.enumerate().unwrap();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (g, _) = mingap(&theta, &o).unwrap();
            assert!((g - masking_oracle(&arms, &theta, false)).abs() < 1e-12);
            let (g, _) = mingap_complete(&theta, &o).unwrap();
            assert!((g - masking_oracle(&arms, &theta, true)).abs() < 1e-12);
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (g, _) = mingap_complete(&theta, &r).unwrap();
            assert!((g - masking_oracle(&rarms, &theta, true)).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_mingap_sees_supersets() {
        // Leader {0}; the only other arm is the superset {0,1}.
        let o = ResourceAllocationOracle { d: 2 };
        let theta = [0.9, 0.2, -0.1, -0.25];
        let (g, leader) = mingap_complete(&theta, &o).unwrap();
        assert_eq!(leader, vec![1.0, 0.0, 1.0, 0.0]);
        assert!((g - 0.05).abs() < 1e-12);
    }

    #[test]
    fn cover_top_1() {
        let arms = cover_coordinates(&TopKOracle { m: 3, k: 1 }).unwrap();
        assert_eq!(arms, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn cover_with_full_set() {
        let inst = build_instance(&InstanceSpec::OptimismCounterexample { m: 4, eps: 0.5 }).unwrap();
        let arms = cover_coordinates(inst.oracle()).unwrap();
        let mut covered = vec![false; inst.dim()];
        for a in &arms {
            for i in crate::model::support(a) {
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|c| *c));
        assert!(arms.len() <= inst.dim());
    }

    #[test]
    fn uncoverable_coordinate() {
        let o = EnumeratedOracle::new(ArmSet::new(vec![vec![1.0, 0.0]]).unwrap());
        assert_eq!(cover_coordinates(&o), Err(Error::Coverage { coord: 1 }));
    }
}
