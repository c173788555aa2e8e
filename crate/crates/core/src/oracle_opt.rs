//! Oracle-efficient solver for the semi-bandit design program
//!
//! ```text
//! min_{tau in [T], lambda}  tau * (beta + sum_x lambda_x theta_bar^T (x_bar - x))
//! s.t.  E[max_x (x_bar - x)^T A_semi(lambda)^{-1/2} eta / (beta + theta_bar^T (x_bar - x))] <= sqrt(tau) C
//! ```
//!
//! using only linear maximization oracle calls: stochastic Frank-Wolfe on a
//! Lagrangian over a truncated simplex, a two-expert multiplicative-weights
//! feasibility loop, bisection on the objective level, and a grid over `tau`.
//! A cheaper penalty heuristic is provided for use inside bandit runs.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_full::DesignSolution;
use crate::error::{Error, Result};
use crate::gwidth::{compute_max, NormalBatch, SupEstimate};
use crate::model::{dot, Allocation, ArmPool};
use crate::oracles::{cover_coordinates, LinMaxOracle};

/// Oracle wrapper counting `argmax` calls.
#[derive(Debug)]
pub struct CountingOracle<'a> {
    inner: &'a dyn LinMaxOracle,
    calls: AtomicU64,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn LinMaxOracle) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl LinMaxOracle for CountingOracle<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn argmax_unchecked(&self, v: &[f64]) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.argmax_unchecked(v)
    }

    fn enumerate(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.enumerate()
    }

    fn is_binary(&self) -> bool {
        self.inner.is_binary()
    }

    fn diameter_bound(&self) -> f64 {
        self.inner.diameter_bound()
    }
}

/// Step rule for the two-expert weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwRate {
    /// `w_i <- w_i (1 + eta h_i)` with `eta = min(tol / (4 rho), 1/2)`.
    Listing,
    /// `w_i <- w_i exp(eta_r h_i / s_i)` with `s_i` the largest `|h_i|` seen
    /// and `eta_r = min(1/2, sqrt(ln 2 / r))`.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub max_mw_rounds: usize,
    pub max_sfw_iters: usize,
    pub max_mc_batch: usize,
    /// Universal constant in the round and batch formulas.
    pub rho_constant: f64,
    pub mw_rate: MwRate,
    /// Samples for the independent check of an averaged iterate.
    pub verify_samples: usize,
    /// Penalty refreshes in [`heuristic_lagrangian`].
    pub heuristic_rounds: usize,
    /// Frank-Wolfe iterations per penalty refresh.
    pub heuristic_iters: usize,
    /// Normal vectors per heuristic gradient.
    pub heuristic_batch: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_mw_rounds: 2000,
            max_sfw_iters: 4000,
            max_mc_batch: 512,
            rho_constant: 1.0,
            mw_rate: MwRate::Normalized,
            verify_samples: 2048,
            heuristic_rounds: 3,
            heuristic_iters: 40,
            heuristic_batch: 128,
        }
    }
}

/// Which iteration caps were hit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub mw_rounds_capped: bool,
    pub sfw_iters_capped: bool,
    pub mc_batch_capped: bool,
}

/// Data of the generic program.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiProgram {
    pub x_bar: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub beta: f64,
    pub c: f64,
    /// Upper end `T` of the range of `tau`.
    pub horizon: u64,
    pub delta_max: f64,
}

impl SemiProgram {
    fn validate(&self, oracle: &dyn LinMaxOracle) -> Result<()> {
        if !oracle.is_binary() {
            return Err(Error::InvalidInput("semi-bandit solver needs a binary arm class".into()));
        }
        if self.x_bar.len() != oracle.dim() || self.theta_bar.len() != oracle.dim() {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        if !(self.beta > 0.0) || !(self.c > 0.0) || !(self.delta_max > 0.0) {
            return Err(Error::InvalidInput("beta, C and delta_max must be positive".into()));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidInput("horizon must be at least 2".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x_bar.len()
    }

    /// `sum_x lambda_x theta_bar^T (x_bar - x)`.
    pub fn lin(&self, ws: &Workspace, lambda: &[f64]) -> f64 {
        let tx = dot(&self.theta_bar, &self.x_bar);
        lambda
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| w * (tx - dot(&self.theta_bar, ws.pool.arm(j))))
            .sum()
    }

    /// `psi = min(1 / (4 d Delta_max T), 1 / (4 d))`.
    pub fn psi(&self) -> f64 {
        let d = self.dim() as f64;
        (1.0 / (4.0 * d * self.delta_max * self.horizon as f64)).min(1.0 / (4.0 * d))
    }
}

/// Lagrangian weights and the `tau` level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagrangeProblem<'a> {
    pub program: &'a SemiProgram,
    pub kappa1: f64,
    pub kappa2: f64,
    pub tau_bar: f64,
}

/// Arms discovered so far; weights are dense vectors aligned with `pool`.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub pool: ArmPool,
}

/// Simplex with the covering arms (pool indices `0..n_cover`) floored at `psi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedSimplex {
    pub psi: f64,
    pub n_cover: usize,
}

impl TruncatedSimplex {
    /// Interns deduplicated covering arms at the front of a new pool.
    pub fn build(oracle: &dyn LinMaxOracle, psi: f64) -> Result<(Self, Workspace)> {
        let cover = cover_coordinates(oracle)?;
        let mut pool = ArmPool::new(oracle.dim());
        for x in &cover {
            pool.intern(x);
        }
        let n_cover = pool.len();
        if !(psi > 0.0) || psi * n_cover as f64 > 1.0 {
            return Err(Error::InvalidInput(format!("psi = {psi} invalid for {n_cover} covering arms")));
        }
        Ok((Self { psi, n_cover }, Workspace { pool }))
    }

    /// Uniform weights over the covering arms.
    pub fn initial(&self, len: usize) -> Vec<f64> {
        let mut w = vec![0.0; len];
        for v in w.iter_mut().take(self.n_cover) {
            *v = 1.0 / self.n_cover as f64;
        }
        w
    }

    /// Minimizer of a linear function over the truncated simplex whose
    /// cheapest arm is `best`: covering arms at `psi`, the rest on `best`.
    pub fn vertex(&self, best: usize, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for x in v.iter_mut().take(self.n_cover) {
            *x = self.psi;
        }
        v[best] += 1.0 - self.n_cover as f64 * self.psi;
        v
    }

    /// Vertex rule applied to explicit per-arm costs (lowest index on ties).
    pub fn linear_min(&self, costs: &[f64]) -> Vec<f64> {
        let best = costs.iter().enumerate().fold((0, f64::INFINITY), |a, (i, c)| if *c < a.1 { (i, *c) } else { a }).0;
        self.vertex(best, costs.len())
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        let total: f64 = w.iter().sum();
        (total - 1.0).abs() <= 1e-9
            && w.iter().all(|v| *v >= 0.0)
            && w.iter().take(self.n_cover).all(|v| *v >= self.psi * (1.0 - 1e-9))
    }
}

fn coordinate_mass(ws: &Workspace, lambda: &[f64], dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; dim];
    for (j, w) in lambda.iter().enumerate() {
        if *w > 0.0 {
            for (k, v) in ws.pool.arm(j).iter().enumerate() {
                a[k] += w * v * v;
            }
        }
    }
    a
}

fn extend(lambda: &mut Vec<f64>, len: usize) {
    if lambda.len() < len {
        lambda.resize(len, 0.0);
    }
}

/// Sample-average supremum and its per-coordinate derivative
/// `G_k = mean_s[-1/2 (x_bar - x_s)_k eta_sk a_k^{-3/2} / (beta + theta_bar^T (x_bar - x_s))]`.
pub fn sup_and_coordinate_gradient(
    program: &SemiProgram,
    a: &[f64],
    batch: &NormalBatch,
    oracle: &dyn LinMaxOracle,
) -> Result<(SupEstimate, Vec<f64>)> {
    let d = program.dim();
    let mut g = vec![0.0; d];
    let mut values = Vec::with_capacity(batch.len());
    let tx = dot(&program.theta_bar, &program.x_bar);
    for s in 0..batch.len() {
        let eta = batch.row(s);
        let (val, x) = compute_max(a, eta, &program.x_bar, &program.theta_bar, program.beta, oracle)?;
        values.push(val);
        let den = program.beta + tx - dot(&program.theta_bar, &x);
        for k in 0..d {
            let diff = program.x_bar[k] - x[k];
            if diff != 0.0 {
                g[k] += -0.5 * diff * eta[k] * a[k].powf(-1.5) / den;
            }
        }
    }
    let n = batch.len() as f64;
    for v in g.iter_mut() {
        *v /= n;
    }
    Ok((SupEstimate::from_samples(&values)?, g))
}

/// Value and per-arm gradient of the sample-average Lagrangian at `lambda`
/// (weights over `arms`), using a fixed batch.
pub fn lagrangian_value_gradient(
    problem: &LagrangeProblem,
    arms: &[Vec<f64>],
    lambda: &[f64],
    batch: &NormalBatch,
    oracle: &dyn LinMaxOracle,
) -> Result<(f64, Vec<f64>)> {
    let p = problem.program;
    let d = p.dim();
    let mut a = vec![0.0; d];
    for (x, w) in arms.iter().zip(lambda) {
        for k in 0..d {
            a[k] += w * x[k] * x[k];
        }
    }
    let (sup, g) = sup_and_coordinate_gradient(p, &a, batch, oracle)?;
    let tx = dot(&p.theta_bar, &p.x_bar);
    let lin: f64 = arms.iter().zip(lambda).map(|(x, w)| w * (tx - dot(&p.theta_bar, x))).sum();
    let value = problem.kappa1 * problem.tau_bar * lin + problem.kappa2 * (sup.mean - problem.tau_bar.sqrt() * p.c);
    let grad = arms
        .iter()
        .map(|x| {
            problem.kappa1 * problem.tau_bar * (tx - dot(&p.theta_bar, x))
                + problem.kappa2 * x.iter().zip(&g).map(|(v, gk)| v * v * gk).sum::<f64>()
        })
        .collect();
    Ok((value, grad))
}

fn capped(formula: f64, cap: usize, flag: &mut bool) -> usize {
    let want = if formula.is_finite() { formula.ceil().max(1.0) } else { f64::INFINITY };
    if want > cap as f64 {
        *flag = true;
        cap
    } else {
        want as usize
    }
}

/// Runs Frank-Wolfe rounds `start..start + iters` on the Lagrangian from
/// `lambda`, with step `q_r = 2/(r+1)` and fresh batches of size `batch_of(r)`.
#[allow(clippy::too_many_arguments)]
fn sfw_rounds<R: Rng + ?Sized>(
    problem: &LagrangeProblem,
    simplex: &TruncatedSimplex,
    ws: &mut Workspace,
    lambda: &mut Vec<f64>,
    start: usize,
    iters: usize,
    mut batch_of: impl FnMut(usize) -> usize,
    oracle: &dyn LinMaxOracle,
    rng: &mut R,
) -> Result<()> {
    let p = problem.program;
    let d = p.dim();
    for r in start..start + iters {
        let q = 2.0 / (r as f64 + 1.0);
        let n = batch_of(r).max(2);
        let batch = NormalBatch::draw(n, d, rng);
        let a = coordinate_mass(ws, lambda, d);
        let g = if problem.kappa2 > 0.0 { sup_and_coordinate_gradient(p, &a, &batch, oracle)?.1 } else { vec![0.0; d] };
        // argmin_x grad(x) = argmax_x x^T (kappa1 tau theta_bar - kappa2 G) for binary arms.
        let v: Vec<f64> =
            (0..d).map(|k| problem.kappa1 * problem.tau_bar * p.theta_bar[k] - problem.kappa2 * g[k]).collect();
        let x = oracle.argmax(&v)?;
        let idx = ws.pool.intern(&x);
        extend(lambda, ws.pool.len());
        let vert = simplex.vertex(idx, ws.pool.len());
        for (l, vv) in lambda.iter_mut().zip(&vert) {
            *l = q * vv + (1.0 - q) * *l;
        }
    }
    Ok(())
}

/// Stochastic Frank-Wolfe on the Lagrangian over the truncated simplex,
/// started from the uniform weights on the covering arms.
#[allow(clippy::too_many_arguments)]
pub fn sfw_lagrangian<R: Rng + ?Sized>(
    problem: &LagrangeProblem,
    simplex: &TruncatedSimplex,
    ws: &mut Workspace,
    tol: f64,
    delta: f64,
    oracle: &dyn LinMaxOracle,
    config: &OptConfig,
    audit: &mut Audit,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput("tol must be positive and delta in (0, 1)".into()));
    }
    let p = problem.program;
    let d = p.dim() as f64;
    let psi = simplex.psi;
    let iters = capped(8.0 * d / (p.beta * psi.powf(2.5) * tol), config.max_sfw_iters, &mut audit.sfw_iters_capped);
    let mut lambda = simplex.initial(ws.pool.len());
    let c = config.rho_constant;
    let cap = config.max_mc_batch;
    let mut batch_flag = false;
    sfw_rounds(
        problem,
        simplex,
        ws,
        &mut lambda,
        1,
        iters,
        |r| {
            let q = 2.0 / (r as f64 + 1.0);
            let rf = r as f64;
            capped(c / (d * psi * psi * q) * (rf * rf / delta).ln(), cap, &mut batch_flag)
        },
        oracle,
        rng,
    )?;
    audit.mc_batch_capped |= batch_flag;
    Ok(lambda)
}

/// Monte Carlo constraint estimate at `lambda` through the oracle.
fn estimate_constraint<R: Rng + ?Sized>(
    program: &SemiProgram,
    ws: &Workspace,
    lambda: &[f64],
    n: usize,
    oracle: &dyn LinMaxOracle,
    rng: &mut R,
) -> Result<SupEstimate> {
    let d = program.dim();
    let a = coordinate_mass(ws, lambda, d);
    let batch = NormalBatch::draw(n.max(2), d, rng);
    crate::gwidth::estimate_sup_oracle(&a, &program.x_bar, &program.theta_bar, program.beta, oracle, &batch)
}

/// Outcome of a feasibility call.
#[derive(Clone, Debug)]
pub struct Feasibility {
    pub feasible: bool,
    pub lambda: Vec<f64>,
    pub rounds: usize,
}

/// Two-expert multiplicative weights for
/// `exists lambda: tau_bar lin(lambda) <= opt_hat  and  E[sup] <= sqrt(tau_bar) C`.
/// Declares infeasibility when the mixed constraint exceeds `2 tol`; declares
/// feasibility only after the averaged iterate passes an independent check
/// (both constraints within `4 tol`, the second at mean + 3 std_err).
#[allow(clippy::too_many_arguments)]
pub fn mw_feasibility<R: Rng + ?Sized>(
    program: &SemiProgram,
    simplex: &TruncatedSimplex,
    ws: &mut Workspace,
    tau_bar: f64,
    opt_hat: f64,
    tol: f64,
    delta: f64,
    oracle: &dyn LinMaxOracle,
    config: &OptConfig,
    audit: &mut Audit,
    rng: &mut R,
) -> Result<Feasibility> {
    let d = program.dim() as f64;
    let psi = simplex.psi;
    let rho = (2.0 * d * program.horizon as f64).max(config.rho_constant * d / (program.beta * psi.sqrt()));
    let eta = (tol / (4.0 * rho)).min(0.5);
    let rounds = capped(16.0 * rho * rho * 2f64.ln() / (tol * tol), config.max_mw_rounds, &mut audit.mw_rounds_capped);
    let est_n = capped(
        config.rho_constant * (3.0 * rounds as f64 / delta).ln() * d / (program.beta * program.beta * psi * tol * tol),
        config.max_mc_batch,
        &mut audit.mc_batch_capped,
    );
    let c_tau = tau_bar.sqrt() * program.c;
    let mut w = [1.0f64, 1.0];
    let mut scale = [0.0f64, 0.0];
    let mut sum: Vec<f64> = Vec::new();
    let sfw_delta = (delta / (2.0 * rounds as f64)).min(0.5);
    for r in 1..=rounds {
        let total = w[0] + w[1];
        let p = [w[0] / total, w[1] / total];
        let problem = LagrangeProblem { program, kappa1: p[0], kappa2: p[1], tau_bar };
        let lambda = sfw_lagrangian(&problem, simplex, ws, tol, sfw_delta, oracle, config, audit, rng)?;
        let h1 = tau_bar * program.lin(ws, &lambda) - opt_hat;
        let h2 = estimate_constraint(program, ws, &lambda, est_n, oracle, rng)?.mean - c_tau;
        if p[0] * h1 + p[1] * h2 > 2.0 * tol {
            return Ok(Feasibility { feasible: false, lambda, rounds: r });
        }
        extend(&mut sum, ws.pool.len());
        for (s, l) in sum.iter_mut().zip(&lambda) {
            *s += l;
        }
        let avg: Vec<f64> = sum.iter().map(|s| s / r as f64).collect();
        let v1 = tau_bar * program.lin(ws, &avg) - opt_hat;
        if v1 <= 4.0 * tol {
            let check = estimate_constraint(program, ws, &avg, config.verify_samples, oracle, rng)?;
            if check.upper() - c_tau <= 4.0 * tol {
                return Ok(Feasibility { feasible: true, lambda: avg, rounds: r });
            }
        }
        let h = [h1, h2];
        match config.mw_rate {
            MwRate::Listing => {
                for i in 0..2 {
                    w[i] *= (1.0 + eta * h[i]).max(1e-300);
                }
            }
            MwRate::Normalized => {
                let step = (2f64.ln() / r as f64).sqrt().min(0.5);
                for i in 0..2 {
                    scale[i] = scale[i].max(h[i].abs());
                    if scale[i] > 0.0 {
                        w[i] *= (step * h[i] / scale[i]).exp();
                    }
                }
                let m = w[0].max(w[1]);
                w = [w[0] / m, w[1] / m];
            }
        }
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / rounds as f64).collect();
    Ok(Feasibility { feasible: false, lambda: avg, rounds })
}

/// Result of [`bin_search_tau`].
#[derive(Clone, Debug)]
pub struct BinSearch {
    pub feasible: bool,
    pub lambda: Vec<f64>,
    /// Bisection steps taken after the initial feasibility check.
    pub depth: usize,
}

/// Bisection on the objective level in `[0, 2 T d]` down to width `tol`.
#[allow(clippy::too_many_arguments)]
pub fn bin_search_tau<R: Rng + ?Sized>(
    program: &SemiProgram,
    simplex: &TruncatedSimplex,
    ws: &mut Workspace,
    tau_bar: f64,
    tol: f64,
    delta: f64,
    oracle: &dyn LinMaxOracle,
    config: &OptConfig,
    audit: &mut Audit,
    rng: &mut R,
) -> Result<BinSearch> {
    if !(tau_bar > 0.0) {
        return Err(Error::InvalidInput("tau_bar must be positive".into()));
    }
    let high0 = 2.0 * program.horizon as f64 * program.dim() as f64;
    let steps = bisection_depth(high0, tol);
    let mw_delta = delta / (steps as f64 + 1.0);
    let first = mw_feasibility(program, simplex, ws, tau_bar, high0, tol, mw_delta, oracle, config, audit, rng)?;
    if !first.feasible {
        return Ok(BinSearch { feasible: false, lambda: first.lambda, depth: 0 });
    }
    let (mut low, mut high) = (0.0, high0);
    let mut best = first.lambda;
    let mut depth = 0;
    while high - low >= tol {
        let mid = 0.5 * (low + high);
        let f = mw_feasibility(program, simplex, ws, tau_bar, mid, tol, mw_delta, oracle, config, audit, rng)?;
        if f.feasible {
            high = mid;
            best = f.lambda;
        } else {
            low = mid;
        }
        depth += 1;
    }
    Ok(BinSearch { feasible: true, lambda: best, depth })
}

/// Number of halvings of `[0, high]` until the width drops below `tol`.
pub fn bisection_depth(high: f64, tol: f64) -> usize {
    let mut w = high;
    let mut n = 0;
    while w >= tol {
        w *= 0.5;
        n += 1;
    }
    n
}

/// `(sqrt(2) - 1) C / 4`.
pub fn default_tol(c: f64) -> f64 {
    (2f64.sqrt() - 1.0) * c / 4.0
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    /// Returned total mass (twice the selected grid point).
    pub tau_bar: f64,
    pub arms: Vec<Vec<f64>>,
    pub lambda_bar: Vec<f64>,
    /// `tau_bar * (beta + lin(lambda_bar))`.
    pub objective: f64,
    /// Constraint estimate at `lambda_bar` (unit mass).
    pub constraint: SupEstimate,
    pub feasible: bool,
    pub oracle_calls: u64,
    pub audit: Audit,
    pub heuristic: bool,
}

/// Grid search over `tau_bar = 2^k <= T`; returns `2 tau_bar` for the grid
/// point with the smallest `tau_bar (beta + lin(lambda))` among feasible ones.
pub fn solve_main<R: Rng + ?Sized>(
    program: &SemiProgram,
    delta: f64,
    oracle: &dyn LinMaxOracle,
    config: &OptConfig,
    rng: &mut R,
) -> Result<SolverReport> {
    program.validate(oracle)?;
    let counting = CountingOracle::new(oracle);
    let (simplex, mut ws) = TruncatedSimplex::build(&counting, program.psi())?;
    let tol = default_tol(program.c);
    let mut audit = Audit::default();
    let t = program.horizon as f64;
    let bs_delta = delta / t.log2().max(1.0);
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut k = 1;
    while 2f64.powi(k) <= t {
        let tau_k = 2f64.powi(k);
        let res = bin_search_tau(program, &simplex, &mut ws, tau_k, tol, bs_delta, &counting, config, &mut audit, rng)?;
        if res.feasible {
            let obj = tau_k * (program.beta + program.lin(&ws, &res.lambda));
            if best.as_ref().is_none_or(|b| obj < b.0) {
                best = Some((obj, tau_k, res.lambda));
            }
        }
        k += 1;
    }
    let Some((_, tau_k, mut lambda)) = best else {
        return Ok(SolverReport {
            tau_bar: 0.0,
            arms: ws.pool.arms().to_vec(),
            lambda_bar: Vec::new(),
            objective: f64::INFINITY,
            constraint: SupEstimate::zero(0),
            feasible: false,
            oracle_calls: counting.calls(),
            audit,
            heuristic: false,
        });
    };
    extend(&mut lambda, ws.pool.len());
    let constraint = estimate_constraint(program, &ws, &lambda, config.verify_samples, &counting, rng)?;
    let tau_bar = 2.0 * tau_k;
    Ok(SolverReport {
        tau_bar,
        objective: tau_bar * (program.beta + program.lin(&ws, &lambda)),
        arms: ws.pool.arms().to_vec(),
        lambda_bar: lambda,
        constraint,
        feasible: true,
        oracle_calls: counting.calls(),
        audit,
        heuristic: false,
    })
}

/// Per-epoch inputs of the heuristic solver.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochInputs {
    pub leader: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub epsilon: f64,
    pub c: f64,
    pub horizon: u64,
    pub delta_max: f64,
    /// Regret objective `sum 2 (eps + gap) tau` when true, total samples otherwise.
    pub regret_objective: bool,
}

/// Design found by [`heuristic_lagrangian`]; `solution.allocation` indexes `arms`.
#[derive(Clone, Debug, Serialize)]
pub struct PoolDesign {
    pub arms: Vec<Vec<f64>>,
    pub solution: DesignSolution,
    pub oracle_calls: u64,
}

/// Penalty heuristic: minimizes the scale-free objective `G(lambda)^2 c(lambda)`
/// by Frank-Wolfe on the Lagrangian whose weights are the objective's
/// multipliers at the current point (`kappa1 : kappa2 = G : c`), refreshed
/// `heuristic_rounds` times, then sets the total mass by homogeneity from a
/// fresh constraint estimate. No approximation guarantee.
pub fn heuristic_lagrangian<R: Rng + ?Sized>(
    inputs: &EpochInputs,
    oracle: &dyn LinMaxOracle,
    config: &OptConfig,
    rng: &mut R,
) -> Result<PoolDesign> {
    let program = SemiProgram {
        x_bar: inputs.leader.clone(),
        theta_bar: inputs.theta_hat.clone(),
        beta: inputs.epsilon,
        c: inputs.c,
        horizon: inputs.horizon.max(2),
        delta_max: inputs.delta_max,
    };
    program.validate(oracle)?;
    let counting = CountingOracle::new(oracle);
    let (simplex, mut ws) = TruncatedSimplex::build(&counting, program.psi())?;
    let d = program.dim();
    let mut lambda = simplex.initial(ws.pool.len());
    let mut r = 1;
    for _ in 0..config.heuristic_rounds.max(1) {
        let a = coordinate_mass(&ws, &lambda, d);
        let batch = NormalBatch::draw(config.heuristic_batch.max(2), d, rng);
        let (sup, _) = sup_and_coordinate_gradient(&program, &a, &batch, &counting)?;
        let g = sup.mean.max(0.0);
        if g == 0.0 {
            break;
        }
        let (kappa1, kappa2) = if inputs.regret_objective {
            let c = program.beta + program.lin(&ws, &lambda);
            (g / (g + c), c / (g + c))
        } else {
            (0.0, 1.0)
        };
        let problem = LagrangeProblem { program: &program, kappa1, kappa2, tau_bar: 1.0 };
        sfw_rounds(
            &problem,
            &simplex,
            &mut ws,
            &mut lambda,
            r,
            config.heuristic_iters,
            |_| config.heuristic_batch,
            &counting,
            rng,
        )?;
        r += config.heuristic_iters;
    }
    extend(&mut lambda, ws.pool.len());
    let est = estimate_constraint(&program, &ws, &lambda, config.verify_samples, &counting, rng)?;
    let arms = ws.pool.arms().to_vec();
    let mass = (est.upper().max(0.0) / program.c).powi(2);
    let tx = dot(&program.theta_bar, &program.x_bar);
    let cost = |x: &[f64]| {
        if inputs.regret_objective {
            2.0 * (program.beta + tx - dot(&program.theta_bar, x))
        } else {
            1.0
        }
    };
    let allocation = Allocation::from_dense(&lambda)?.scaled(mass);
    let objective = allocation.entries().iter().map(|(i, w)| w * cost(&arms[*i])).sum();
    let constraint = if mass > 0.0 { est.scaled(1.0 / mass.sqrt()) } else { est };
    let feasible = mass == 0.0 || constraint.upper() <= program.c * (1.0 + 1e-9);
    Ok(PoolDesign {
        arms,
        solution: DesignSolution { allocation, objective, constraint, deviation: 0.0, feasible },
        oracle_calls: counting.calls(),
    })
}
