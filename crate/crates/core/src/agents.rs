//! Bandit agents: RegretMED with three design solvers, Gaussian-width action
//! elimination, pure exploration, and the optimistic and sampling baselines.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design_full::{
    constraint_constant, gw_ae_design, solve_design, ConstantProfile, DesignConfig, DesignProblem, Variant,
};
use crate::error::{Error, Result};
use crate::model::{
    dot, sample_batch, sample_feedback, Allocation, ArmPool, FeedbackKind, Observation, RegretTrace, Stats,
};
use crate::oracle_opt::{heuristic_lagrangian, solve_main, EpochInputs, OptConfig, SemiProgram};
use crate::oracles::{cover_coordinates, mingap_complete, Instance, LinMaxOracle};
use crate::rounding::{sparsify, to_pull_counts};

/// Agent identifiers used in experiment configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    RegretMedFull,
    RegretMedEfficient,
    RegretMedHeuristic,
    GwAe,
    PureExplore,
    Linucb,
    Thompson,
    Combucb1,
    CtsGaussian,
}

impl AgentKind {
    pub const ALL: [AgentKind; 9] = [
        AgentKind::RegretMedFull,
        AgentKind::RegretMedEfficient,
        AgentKind::RegretMedHeuristic,
        AgentKind::GwAe,
        AgentKind::PureExplore,
        AgentKind::Linucb,
        AgentKind::Thompson,
        AgentKind::Combucb1,
        AgentKind::CtsGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::RegretMedFull => "regret_med_full",
            AgentKind::RegretMedEfficient => "regret_med_efficient",
            AgentKind::RegretMedHeuristic => "regret_med_heuristic",
            AgentKind::GwAe => "gw_ae",
            AgentKind::PureExplore => "pure_explore",
            AgentKind::Linucb => "linucb",
            AgentKind::Thompson => "thompson",
            AgentKind::Combucb1 => "combucb1",
            AgentKind::CtsGaussian => "cts_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown agent `{s}`")))
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Design solver used by RegretMED.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Enumeration solver with the full constraint.
    Full,
    /// Oracle grid search with the relaxed constraint.
    Efficient,
    /// Oracle penalty heuristic with the relaxed constraint.
    Heuristic,
}

/// Source of the largest-gap input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMaxMode {
    /// The true largest gap (enumerable classes only).
    Known,
    /// `sqrt(d) * diam(X)`.
    #[default]
    UpperBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub constant_profile: ConstantProfile,
    /// Constant profile of pure exploration, whose output is a δ-correct
    /// recommendation rather than low regret.
    pub pure_explore_profile: ConstantProfile,
    /// Multiplies the design constraint constant.
    pub constraint_scale: f64,
    /// Refit from the current epoch's data only.
    pub per_epoch_refit: bool,
    pub delta_max: DeltaMaxMode,
    pub design: DesignConfig,
    pub opt: OptConfig,
    pub linucb_alpha: f64,
    pub combucb_constant: f64,
    pub gw_zeta: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            constant_profile: ConstantProfile::Practical,
            pure_explore_profile: ConstantProfile::Paper,
            constraint_scale: 1.0,
            per_epoch_refit: false,
            delta_max: DeltaMaxMode::UpperBound,
            design: DesignConfig::default(),
            opt: OptConfig::default(),
            linucb_alpha: 1.0,
            combucb_constant: 1.5,
            gw_zeta: 0.1,
        }
    }
}

/// Environment handle: draws feedback, records regret per pull.
/// Agents see the arm class only through the oracle.
pub struct Env<'a, R: Rng> {
    instance: &'a Instance,
    kind: FeedbackKind,
    horizon: u64,
    rng: R,
    cum: f64,
    trace: Vec<f64>,
    pool: ArmPool,
    pulls: BTreeMap<usize, u64>,
}

impl<'a, R: Rng> Env<'a, R> {
    pub fn new(instance: &'a Instance, kind: FeedbackKind, horizon: u64, rng: R) -> Result<Self> {
        if kind == FeedbackKind::Semi && !instance.oracle().is_binary() {
            return Err(Error::InvalidInput("semi-bandit feedback needs binary arms".into()));
        }
        let pool = match instance.arm_set() {
            Some(set) => ArmPool::from_arm_set(set),
            None => ArmPool::new(instance.dim()),
        };
        Ok(Self {
            instance,
            kind,
            horizon,
            rng,
            cum: 0.0,
            trace: Vec::with_capacity(horizon.min(1 << 20) as usize),
            pool,
            pulls: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> FeedbackKind {
        self.kind
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.instance.dim()
    }

    pub fn oracle(&self) -> &'a dyn LinMaxOracle {
        self.instance.oracle()
    }

    /// Enumerated arms, when available.
    pub fn arms(&self) -> Option<&'a [Vec<f64>]> {
        self.instance.arm_set().map(|s| s.arms())
    }

    pub fn require_arms(&self) -> Result<&'a [Vec<f64>]> {
        self.instance.require_arm_set().map(|s| s.arms())
    }

    pub fn steps(&self) -> u64 {
        self.trace.len() as u64
    }

    pub fn remaining(&self) -> u64 {
        self.horizon - self.steps()
    }

    pub fn done(&self) -> bool {
        self.remaining() == 0
    }

    /// `Known` mode reads the true largest gap; it is an input, not feedback.
    pub fn delta_max(&self, mode: DeltaMaxMode) -> Result<f64> {
        match mode {
            DeltaMaxMode::Known => self.instance.delta_max(),
            DeltaMaxMode::UpperBound => Ok(self.instance.delta_max_bound()),
        }
    }

    fn record(&mut self, arm: &[f64], n: u64) {
        let r = self.instance.regret(arm).max(0.0);
        for _ in 0..n {
            self.cum += r;
            self.trace.push(self.cum);
        }
        let idx = self.pool.intern(arm);
        *self.pulls.entry(idx).or_insert(0) += n;
    }

    /// One pull; `None` once the horizon is reached.
    pub fn pull(&mut self, arm: &[f64]) -> Result<Option<Observation>> {
        if self.done() {
            return Ok(None);
        }
        let obs = sample_feedback(self.instance.theta_star(), arm, self.kind, &mut self.rng)?;
        self.record(arm, 1);
        Ok(Some(obs))
    }

    /// Up to `n` pulls of one arm, truncated at the horizon. Returns the
    /// number taken and their aggregated feedback.
    pub fn pull_batch(&mut self, arm: &[f64], n: u64) -> Result<(u64, crate::model::BatchObservation)> {
        let n = n.min(self.remaining());
        let obs = sample_batch(self.instance.theta_star(), arm, self.kind, n, &mut self.rng)?;
        self.record(arm, n);
        Ok((n, obs))
    }

    /// Pulls `arm` for every remaining step.
    pub fn exploit(&mut self, arm: &[f64]) -> Result<()> {
        if arm.len() != self.dim() {
            return Err(Error::InvalidInput("arm dimension mismatch".into()));
        }
        let n = self.remaining();
        self.record(arm, n);
        Ok(())
    }

    /// Arms pulled so far, indexed as in [`RegretTrace::pulls`].
    pub fn pool(&self) -> &ArmPool {
        &self.pool
    }

    pub fn into_trace(self) -> RegretTrace {
        RegretTrace { cum_regret: self.trace, pulls: self.pulls }
    }
}

/// What happened in one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub epsilon: f64,
    /// `sum (eps + gap_hat) tau` of the design.
    pub design_cost: f64,
    pub feasible: bool,
    pub support: usize,
    pub degraded: bool,
    pub planned_pulls: u64,
    pub pulls: u64,
    pub oracle_calls: u64,
    /// Empirical gap after the epoch (`None` if the epoch never pulled).
    pub mingap: Option<f64>,
    /// Active arms (elimination agents only).
    pub active: Option<usize>,
}

/// Result of one agent run.
#[derive(Clone, Debug)]
pub struct AgentOutcome {
    pub trace: RegretTrace,
    /// Arms indexed by `trace.pulls`.
    pub arms: Vec<Vec<f64>>,
    pub epochs: Vec<EpochRecord>,
    /// Pure exploration: the recommended arm.
    pub recommendation: Option<Vec<f64>>,
}

impl AgentOutcome {
    pub fn samples(&self) -> u64 {
        self.trace.len() as u64
    }

    pub fn pulls_of(&self, arm: &[f64]) -> u64 {
        self.arms.iter().position(|a| a.as_slice() == arm).and_then(|i| self.trace.pulls.get(&i).copied()).unwrap_or(0)
    }
}

/// Runs `agent` for `horizon` steps with noise from `env_rng` and internal
/// randomness from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn run_agent<R1: Rng, R2: Rng>(
    agent: AgentKind,
    instance: &Instance,
    kind: FeedbackKind,
    horizon: u64,
    delta: f64,
    config: &AgentConfig,
    env_rng: R1,
    rng: &mut R2,
) -> Result<AgentOutcome> {
    let mut env = Env::new(instance, kind, horizon, env_rng)?;
    let mut recommendation = None;
    let epochs = match agent {
        AgentKind::RegretMedFull => regret_med(&mut env, delta, Profile::Full, config, rng)?,
        AgentKind::RegretMedEfficient => regret_med(&mut env, delta, Profile::Efficient, config, rng)?,
        AgentKind::RegretMedHeuristic => regret_med(&mut env, delta, Profile::Heuristic, config, rng)?,
        AgentKind::GwAe => gw_ae(&mut env, delta, config, rng)?,
        AgentKind::PureExplore => {
            let (arm, epochs) = pure_explore(&mut env, delta, config, rng)?;
            recommendation = Some(arm);
            epochs
        }
        AgentKind::Linucb => {
            linucb(&mut env, config)?;
            Vec::new()
        }
        AgentKind::Thompson => {
            thompson(&mut env, rng)?;
            Vec::new()
        }
        AgentKind::Combucb1 => {
            combucb1(&mut env, config)?;
            Vec::new()
        }
        AgentKind::CtsGaussian => {
            cts_gaussian(&mut env, rng)?;
            Vec::new()
        }
    };
    let arms = env.pool().arms().to_vec();
    Ok(AgentOutcome { trace: env.into_trace(), arms, epochs, recommendation })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Hard stop on the epoch counter; `eps` has underflowed long before.
const MAX_EPOCHS: u32 = 200;

/// A design over an explicit arm list.
struct EpochDesign {
    arms: Vec<Vec<f64>>,
    allocation: Allocation,
    feasible: bool,
    oracle_calls: u64,
    /// Solver objective at `allocation`.
    objective: f64,
    /// Upper confidence value of the constraint at `allocation`.
    constraint: f64,
}

/// Leader, estimate and gap state carried across epochs.
struct GapState {
    leader: Vec<f64>,
    theta: Vec<f64>,
}

impl GapState {
    fn gap(&self, x: &[f64]) -> f64 {
        (dot(&self.theta, &self.leader) - dot(&self.theta, x)).max(0.0)
    }
}

#[allow(clippy::too_many_arguments)]
fn design_epoch<R: Rng + Sized, E: Rng>(
    env: &Env<'_, E>,
    profile: Profile,
    variant_pure: bool,
    state: &GapState,
    epoch: u32,
    epsilon: f64,
    delta: f64,
    delta_max: f64,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<EpochDesign> {
    let variant = match (variant_pure, profile) {
        (true, _) => Variant::PureExplore,
        (false, Profile::Full) => Variant::Full,
        (false, _) => Variant::Relaxed,
    };
    let constants = if variant_pure { config.pure_explore_profile } else { config.constant_profile };
    let c = constraint_constant(variant, constants, epoch, delta) * config.constraint_scale;
    match profile {
        Profile::Full => {
            let arms = env.require_arms()?;
            let problem = DesignProblem {
                epsilon,
                gaps: arms.iter().map(|x| state.gap(x)).collect(),
                leader: state.leader.clone(),
                delta,
                epoch,
                feedback: env.kind(),
                variant,
                constant: c,
            };
            let sol = solve_design(&problem, arms, &config.design, rng)?;
            Ok(EpochDesign {
                arms: arms.to_vec(),
                objective: sol.objective,
                constraint: sol.constraint_upper(),
                allocation: sol.allocation,
                feasible: sol.feasible,
                oracle_calls: 0,
            })
        }
        Profile::Efficient => {
            if env.kind() != FeedbackKind::Semi {
                return Err(Error::InvalidInput("the oracle solvers need semi-bandit feedback".into()));
            }
            let program = SemiProgram {
                x_bar: state.leader.clone(),
                theta_bar: state.theta.clone(),
                beta: epsilon,
                c,
                horizon: env.horizon().max(2),
                delta_max,
            };
            let report = solve_main(&program, delta, env.oracle(), &config.opt, rng)?;
            let allocation = if report.feasible {
                Allocation::from_dense(&report.lambda_bar)?.scaled(report.tau_bar)
            } else {
                Allocation::default()
            };
            let constraint = if report.tau_bar > 0.0 {
                report.constraint.scaled(report.tau_bar.sqrt().recip()).upper()
            } else {
                f64::INFINITY
            };
            Ok(EpochDesign {
                arms: report.arms,
                allocation,
                feasible: report.feasible,
                oracle_calls: report.oracle_calls,
                objective: report.objective,
                constraint,
            })
        }
        Profile::Heuristic => {
            if env.kind() != FeedbackKind::Semi {
                return Err(Error::InvalidInput("the oracle solvers need semi-bandit feedback".into()));
            }
            let inputs = EpochInputs {
                leader: state.leader.clone(),
                theta_hat: state.theta.clone(),
                epsilon,
                c,
                horizon: env.horizon(),
                delta_max,
                regret_objective: !variant_pure,
            };
            let d = heuristic_lagrangian(&inputs, env.oracle(), &config.opt, rng)?;
            Ok(EpochDesign {
                arms: d.arms,
                objective: d.solution.objective,
                constraint: d.solution.constraint_upper(),
                allocation: d.solution.allocation,
                feasible: d.solution.feasible,
                oracle_calls: d.oracle_calls,
            })
        }
    }
}

/// The epoch-one design of a design-based agent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FirstDesign {
    pub epsilon: f64,
    pub arms: Vec<Vec<f64>>,
    /// `(arm_index, weight)` over `arms`, weights in pulls.
    pub weights: Vec<(usize, f64)>,
    pub objective: f64,
    pub constraint: f64,
    pub feasible: bool,
    pub oracle_calls: u64,
}

/// Solves the design an agent would solve in its first epoch, before any
/// data (leader and estimate as in the agent's initial state).
#[allow(clippy::too_many_arguments)]
pub fn first_epoch_design<R: Rng>(
    agent: AgentKind,
    instance: &Instance,
    kind: FeedbackKind,
    horizon: u64,
    delta: f64,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<FirstDesign> {
    check_delta(delta)?;
    let env = Env::new(instance, kind, horizon, rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let d = env.dim();
    let (profile, pure) = match agent {
        AgentKind::RegretMedFull => (Profile::Full, false),
        AgentKind::RegretMedEfficient => (Profile::Efficient, false),
        AgentKind::RegretMedHeuristic => (Profile::Heuristic, false),
        AgentKind::PureExplore => {
            if kind != FeedbackKind::Semi {
                return Err(Error::InvalidInput("pure exploration needs semi-bandit feedback".into()));
            }
            (if env.arms().is_some() { Profile::Full } else { Profile::Heuristic }, true)
        }
        other => return Err(Error::Config(format!("agent `{other}` does not solve a design"))),
    };
    let leader = if pure { env.oracle().argmax(&vec![0.0; d])? } else { vec![0.0; d] };
    let state = GapState { leader, theta: vec![0.0; d] };
    let delta_max = env.delta_max(config.delta_max)?;
    let epsilon = delta_max * 0.5;
    let design = design_epoch(&env, profile, pure, &state, 1, epsilon, delta, delta_max, config, rng)?;
    Ok(FirstDesign {
        epsilon,
        weights: design.allocation.entries().to_vec(),
        arms: design.arms,
        objective: design.objective,
        constraint: design.constraint,
        feasible: design.feasible,
        oracle_calls: design.oracle_calls,
    })
}

/// Sparsifies `design` and pulls `ceil(alpha_x)` times per arm in index
/// order. Returns `(planned, taken, support, degraded)`.
fn pull_design<E: Rng>(
    env: &mut Env<'_, E>,
    design: &EpochDesign,
    stats: &mut Stats,
) -> Result<(u64, u64, usize, bool)> {
    let sparse = sparsify(&design.allocation, env.kind(), &design.arms)?;
    let counts = to_pull_counts(&sparse.allocation);
    let planned = counts.iter().map(|c| c.1).sum();
    let mut taken = 0;
    for (i, n) in &counts {
        let arm = &design.arms[*i];
        let (k, obs) = env.pull_batch(arm, *n)?;
        if k > 0 {
            stats.add_batch(arm, &obs)?;
        }
        taken += k;
    }
    Ok((planned, taken, counts.len(), sparse.degraded))
}

/// RegretMED: per epoch, solve the design, stop exploring if its regret
/// budget exceeds `T eps`, otherwise pull the sparsified design, refit, and
/// stop once the empirical gap exceeds `2 eps`. The remaining steps pull the
/// empirical best arm.
pub fn regret_med<R: Rng, E: Rng>(
    env: &mut Env<'_, E>,
    delta: f64,
    profile: Profile,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<Vec<EpochRecord>> {
    check_delta(delta)?;
    let d = env.dim();
    let delta_max = env.delta_max(config.delta_max)?;
    let horizon = env.horizon() as f64;
    let mut stats = Stats::new(d, env.kind());
    let mut state = GapState { leader: vec![0.0; d], theta: vec![0.0; d] };
    let mut records = Vec::new();
    let mut epoch = 1u32;
    while !env.done() && epoch <= MAX_EPOCHS {
        let epsilon = delta_max * 0.5f64.powi(epoch as i32);
        if !(epsilon > 0.0) {
            break;
        }
        let design = design_epoch(env, profile, false, &state, epoch, epsilon, delta, delta_max, config, rng)?;
        if !design.feasible && epoch == 1 {
            return Err(Error::Config("design infeasible in the first epoch; the constraint constant is too small for this instance".into()));
        }
        let cost: f64 =
            design.allocation.entries().iter().map(|(i, w)| (epsilon + state.gap(&design.arms[*i])) * w).sum();
        let mut record = EpochRecord {
            epoch,
            epsilon,
            design_cost: cost,
            feasible: design.feasible,
            support: design.allocation.support_len(),
            degraded: false,
            planned_pulls: 0,
            pulls: 0,
            oracle_calls: design.oracle_calls,
            mingap: None,
            active: None,
        };
        if cost > horizon * epsilon || !design.feasible {
            records.push(record);
            break;
        }
        if config.per_epoch_refit {
            stats = Stats::new(d, env.kind());
        }
        let (planned, taken, support, degraded) = pull_design(env, &design, &mut stats)?;
        record.planned_pulls = planned;
        record.pulls = taken;
        record.support = support;
        record.degraded = degraded;
        if taken > 0 {
            state.theta = stats.estimate().theta;
        }
        state.leader = env.oracle().argmax(&state.theta)?;
        let (gap, _) = mingap_complete(&state.theta, env.oracle())?;
        record.mingap = Some(gap);
        records.push(record);
        if gap > 2.0 * epsilon {
            break;
        }
        epoch += 1;
    }
    if !env.done() {
        let best = env.oracle().argmax(&state.theta)?;
        env.exploit(&best)?;
    }
    Ok(records)
}

/// Gaussian-width action elimination over an enumerable class. Each epoch's
/// estimate uses only that epoch's data.
pub fn gw_ae<R: Rng, E: Rng>(
    env: &mut Env<'_, E>,
    delta: f64,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<Vec<EpochRecord>> {
    check_delta(delta)?;
    let arms = env.require_arms()?;
    let delta_max = env.delta_max(config.delta_max)?;
    let zeta = config.gw_zeta;
    let mut active: Vec<usize> = (0..arms.len()).collect();
    let mut records = Vec::new();
    let mut epoch = 1u32;
    while active.len() > 1 && !env.done() && epoch <= MAX_EPOCHS {
        let epsilon = delta_max * 0.5f64.powi(epoch as i32);
        let act: Vec<Vec<f64>> = active.iter().map(|&i| arms[i].clone()).collect();
        let design = gw_ae_design(&act, env.kind(), &config.design, rng)?;
        let log = (2.0 * (epoch as f64).powi(2) / delta).ln();
        let tau = 2.0 * (1.0 + zeta) / (epsilon * epsilon) * (design.gamma.mean.max(0.0) + 2.0 * design.norm * log);
        let allocation = Allocation::from_dense(&design.lambda)?.scaled(tau);
        let mut stats = Stats::new(env.dim(), env.kind());
        let ed = EpochDesign {
            arms: act.clone(),
            allocation,
            feasible: true,
            oracle_calls: 0,
            objective: 0.0,
            constraint: 0.0,
        };
        let (planned, taken, support, degraded) = pull_design(env, &ed, &mut stats)?;
        let theta = stats.estimate().theta;
        let values: Vec<f64> = act.iter().map(|x| dot(x, &theta)).collect();
        let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if taken == planned {
            active = active.iter().zip(&values).filter(|(_, v)| top - **v <= 2.0 * epsilon).map(|(i, _)| *i).collect();
        }
        records.push(EpochRecord {
            epoch,
            epsilon,
            design_cost: tau * epsilon,
            feasible: true,
            support,
            degraded,
            planned_pulls: planned,
            pulls: taken,
            oracle_calls: 0,
            mingap: None,
            active: Some(active.len()),
        });
        epoch += 1;
    }
    if !env.done() {
        let last = arms[active[0]].clone();
        env.exploit(&last)?;
    }
    Ok(records)
}

/// Pure exploration with the total-sample design; stops once the empirical
/// gap reaches `3 eps / 2` (or the horizon is exhausted) and recommends the
/// empirical best arm.
pub fn pure_explore<R: Rng, E: Rng>(
    env: &mut Env<'_, E>,
    delta: f64,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<EpochRecord>)> {
    check_delta(delta)?;
    if env.kind() != FeedbackKind::Semi {
        return Err(Error::InvalidInput("pure exploration needs semi-bandit feedback".into()));
    }
    let d = env.dim();
    let delta_max = env.delta_max(config.delta_max)?;
    let profile = if env.arms().is_some() { Profile::Full } else { Profile::Heuristic };
    let mut stats = Stats::new(d, env.kind());
    let mut state = GapState { leader: env.oracle().argmax(&vec![0.0; d])?, theta: vec![0.0; d] };
    let mut records = Vec::new();
    let mut epoch = 1u32;
    while !env.done() && epoch <= MAX_EPOCHS {
        let epsilon = delta_max * 0.5f64.powi(epoch as i32);
        if !(epsilon > 0.0) {
            break;
        }
        let design = design_epoch(env, profile, true, &state, epoch, epsilon, delta, delta_max, config, rng)?;
        if !design.feasible && epoch == 1 {
            return Err(Error::Config("design infeasible in the first epoch".into()));
        }
        if config.per_epoch_refit {
            stats = Stats::new(d, env.kind());
        }
        let (planned, taken, support, degraded) = pull_design(env, &design, &mut stats)?;
        if taken > 0 {
            state.theta = stats.estimate().theta;
        }
        state.leader = env.oracle().argmax(&state.theta)?;
        let (gap, _) = mingap_complete(&state.theta, env.oracle())?;
        records.push(EpochRecord {
            epoch,
            epsilon,
            design_cost: design.allocation.total(),
            feasible: design.feasible,
            support,
            degraded,
            planned_pulls: planned,
            pulls: taken,
            oracle_calls: design.oracle_calls,
            mingap: Some(gap),
            active: None,
        });
        if gap >= 1.5 * epsilon {
            break;
        }
        epoch += 1;
    }
    Ok((state.leader, records))
}

/// Ridge statistics `V = I + sum x x^T`, `b = sum x y`.
struct Ridge {
    v: DMatrix<f64>,
    b: DVector<f64>,
}

impl Ridge {
    fn new(d: usize) -> Self {
        Self { v: DMatrix::identity(d, d), b: DVector::zeros(d) }
    }

    fn add(&mut self, x: &[f64], y: f64) {
        let x = DVector::from_column_slice(x);
        self.v.ger(1.0, &x, &x, 1.0);
        self.b.axpy(y, &x, 1.0);
    }

    fn factor(&self) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        self.v.clone().cholesky().expect("ridge matrix is positive definite")
    }
}

fn bandit_reward(obs: Observation) -> f64 {
    match obs {
        Observation::Bandit(y) => y,
        Observation::Semi(v) => v.iter().map(|p| p.1).sum(),
    }
}

/// Ridge LinUCB (`lambda = 1`) with bonus `sqrt(alpha ||x||^2_{V^-1} log T)`.
pub fn linucb<E: Rng>(env: &mut Env<'_, E>, config: &AgentConfig) -> Result<()> {
    if env.kind() != FeedbackKind::Bandit {
        return Err(Error::InvalidInput("linucb needs bandit feedback".into()));
    }
    let arms = env.require_arms()?;
    let mut ridge = Ridge::new(env.dim());
    let log_t = (env.horizon() as f64).ln().max(0.0);
    while !env.done() {
        let chol = ridge.factor();
        let theta = chol.solve(&ridge.b);
        let scores = arms.iter().map(|x| {
            let xv = DVector::from_column_slice(x);
            let norm = xv.dot(&chol.solve(&xv));
            xv.dot(&theta) + (config.linucb_alpha * norm * log_t).sqrt()
        });
        let i = crate::model::argmax_by(scores);
        if let Some(obs) = env.pull(&arms[i])? {
            ridge.add(&arms[i], bandit_reward(obs));
        }
    }
    Ok(())
}

/// Gaussian linear Thompson sampling with posterior `N(V^-1 b, V^-1)`.
pub fn thompson<R: Rng, E: Rng>(env: &mut Env<'_, E>, rng: &mut R) -> Result<()> {
    if env.kind() != FeedbackKind::Bandit {
        return Err(Error::InvalidInput("thompson needs bandit feedback".into()));
    }
    let d = env.dim();
    let mut ridge = Ridge::new(d);
    while !env.done() {
        let chol = ridge.factor();
        let mean = chol.solve(&ridge.b);
        // V = L L^T, so L^{-T} z has covariance V^{-1}.
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let noise = chol.l().tr_solve_upper_triangular(&z).expect("triangular factor is invertible");
        let sample: Vec<f64> = (mean + noise).iter().copied().collect();
        let arm = env.oracle().argmax(&sample)?;
        if let Some(obs) = env.pull(&arm)? {
            ridge.add(&arm, bandit_reward(obs));
        }
    }
    Ok(())
}

/// Per-coordinate sums and counts for the semi-bandit baselines.
struct CoordStats {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl CoordStats {
    fn new(d: usize) -> Self {
        Self { sums: vec![0.0; d], counts: vec![0; d] }
    }

    fn add(&mut self, obs: Observation) {
        if let Observation::Semi(v) = obs {
            for (i, y) in v {
                self.sums[i] += y;
                self.counts[i] += 1;
            }
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            0.0
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }
}

/// One pull of each coordinate-covering arm.
fn cover_pass<E: Rng>(env: &mut Env<'_, E>, stats: &mut CoordStats) -> Result<()> {
    for arm in cover_coordinates(env.oracle())? {
        if let Some(obs) = env.pull(&arm)? {
            stats.add(obs);
        }
    }
    Ok(())
}

/// CombUCB1: oracle maximization of `theta_i + sqrt(c log t / T_i)`.
pub fn combucb1<E: Rng>(env: &mut Env<'_, E>, config: &AgentConfig) -> Result<()> {
    if env.kind() != FeedbackKind::Semi {
        return Err(Error::InvalidInput("combucb1 needs semi-bandit feedback".into()));
    }
    let d = env.dim();
    let mut stats = CoordStats::new(d);
    cover_pass(env, &mut stats)?;
    let mut ucb = vec![0.0; d];
    while !env.done() {
        let log_t = ((env.steps() + 1) as f64).ln();
        for (i, u) in ucb.iter_mut().enumerate() {
            *u = match stats.counts[i] {
                0 => f64::INFINITY,
                n => stats.mean(i) + (config.combucb_constant * log_t / n as f64).sqrt(),
            };
        }
        let arm = env.oracle().argmax(&ucb)?;
        if let Some(obs) = env.pull(&arm)? {
            stats.add(obs);
        }
    }
    Ok(())
}

/// Semi-bandit Thompson sampling with independent `N(theta_i, 1 / T_i)` posteriors.
pub fn cts_gaussian<R: Rng, E: Rng>(env: &mut Env<'_, E>, rng: &mut R) -> Result<()> {
    if env.kind() != FeedbackKind::Semi {
        return Err(Error::InvalidInput("cts_gaussian needs semi-bandit feedback".into()));
    }
    let d = env.dim();
    let mut stats = CoordStats::new(d);
    cover_pass(env, &mut stats)?;
    let mut sample = vec![0.0; d];
    while !env.done() {
        for (i, s) in sample.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *s = match stats.counts[i] {
                0 => z,
                n => stats.mean(i) + z / (n as f64).sqrt(),
            };
        }
        let arm = env.oracle().argmax(&sample)?;
        if let Some(obs) = env.pull(&arm)? {
            stats.add(obs);
        }
    }
    Ok(())
}

/// Epoch bound `log2(max||x|| / min||x|| (diam ||theta|| sqrt(T) + 3)) + 1`
/// over the nonzero arms of an enumerable instance.
pub fn epoch_bound(instance: &Instance, horizon: u64) -> Result<f64> {
    let set = instance.require_arm_set()?;
    let norms: Vec<f64> = set.arms().iter().map(|a| dot(a, a).sqrt()).filter(|n| *n > 0.0).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let theta = instance.theta_star();
    let tn = dot(theta, theta).sqrt();
    Ok((max / min * (set.diameter() * tn * (horizon as f64).sqrt() + 3.0)).log2() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stream_rng;
    use crate::oracles::{build_instance, InstanceSpec};

    fn run(agent: AgentKind, inst: &Instance, kind: FeedbackKind, t: u64, seed: u64) -> AgentOutcome {
        let cfg = AgentConfig::default();
        let mut rng = stream_rng(seed, agent.name(), 1);
        run_agent(agent, inst, kind, t, 0.05, &cfg, stream_rng(seed, agent.name(), 0), &mut rng).unwrap()
    }

    fn check_trace(trace: &RegretTrace, t: u64, delta_max: f64) {
        assert_eq!(trace.len() as u64, t);
        let mut prev = 0.0;
        for (s, v) in trace.cum_regret.iter().enumerate() {
            assert!(*v >= prev);
            assert!(*v <= (s + 1) as f64 * delta_max + 1e-9);
            prev = *v;
        }
    }

    #[test]
    fn singleton_has_zero_regret() {
        let inst = Instance::explicit(vec![vec![1.0, 0.0]], vec![0.3, 0.1]).unwrap();
        for agent in [AgentKind::RegretMedFull, AgentKind::Linucb, AgentKind::Thompson] {
            let out = run(agent, &inst, FeedbackKind::Bandit, 500, 1);
            assert_eq!(out.trace.len(), 500);
            assert_eq!(out.trace.final_regret(), 0.0);
        }
        let inst = Instance::explicit(vec![vec![1.0, 1.0]], vec![0.3, 0.1]).unwrap();
        for agent in [
            AgentKind::RegretMedFull,
            AgentKind::RegretMedHeuristic,
            AgentKind::GwAe,
            AgentKind::Combucb1,
            AgentKind::CtsGaussian,
        ] {
            let out = run(agent, &inst, FeedbackKind::Semi, 500, 1);
            assert_eq!(out.trace.len(), 500, "{agent}");
            assert_eq!(out.trace.final_regret(), 0.0, "{agent}");
        }
    }

    #[test]
    fn traces_are_monotone_and_bounded() {
        let inst = build_instance(&InstanceSpec::TopK { m: 5, k: 2, theta: None, theta_seed: Some(3) }).unwrap();
        let dm = inst.delta_max().unwrap();
        for agent in [
            AgentKind::RegretMedFull,
            AgentKind::RegretMedHeuristic,
            AgentKind::GwAe,
            AgentKind::Combucb1,
            AgentKind::CtsGaussian,
        ] {
            let out = run(agent, &inst, FeedbackKind::Semi, 3000, 2);
            check_trace(&out.trace, 3000, dm);
        }
        let eoo = build_instance(&InstanceSpec::EndOfOptimism { eps: 0.1 }).unwrap();
        let dm = eoo.delta_max().unwrap();
        for agent in [AgentKind::RegretMedFull, AgentKind::Linucb, AgentKind::Thompson, AgentKind::GwAe] {
            let out = run(agent, &eoo, FeedbackKind::Bandit, 3000, 2);
            check_trace(&out.trace, 3000, dm);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = build_instance(&InstanceSpec::TopK { m: 4, k: 2, theta: None, theta_seed: Some(5) }).unwrap();
        for agent in [AgentKind::RegretMedHeuristic, AgentKind::CtsGaussian, AgentKind::GwAe] {
            let a = run(agent, &inst, FeedbackKind::Semi, 2000, 9);
            let b = run(agent, &inst, FeedbackKind::Semi, 2000, 9);
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn noiseless_separation_for_optimistic_baselines() {
        // Gap 1 is huge relative to the unit noise after a few hundred pulls.
        let inst = Instance::explicit(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        for agent in [AgentKind::Linucb, AgentKind::Thompson] {
            let out = run(agent, &inst, FeedbackKind::Bandit, 4000, 3);
            let late = out.trace.cum_regret[3999] - out.trace.cum_regret[2999];
            assert!(late <= 5.0, "{agent}: {late}");
        }
        for agent in [AgentKind::Combucb1, AgentKind::CtsGaussian] {
            let out = run(agent, &inst, FeedbackKind::Semi, 4000, 3);
            let late = out.trace.cum_regret[3999] - out.trace.cum_regret[2999];
            assert!(late <= 5.0, "{agent}: {late}");
        }
    }

    #[test]
    fn gw_ae_stops_pulling_eliminated_arm() {
        let inst = Instance::explicit(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        let out = run(AgentKind::GwAe, &inst, FeedbackKind::Semi, 20_000, 4);
        let last = out.epochs.last().unwrap();
        assert_eq!(last.active, Some(1));
        let explored: u64 = out.epochs.iter().map(|e| e.pulls).sum();
        assert!(explored < 20_000);
        let at_elim = out.trace.cum_regret[explored as usize - 1];
        assert_eq!(out.trace.final_regret(), at_elim);
    }

    #[test]
    fn regret_med_epochs_halve_and_stay_bounded() {
        let inst = build_instance(&InstanceSpec::TopK { m: 5, k: 2, theta: None, theta_seed: Some(3) }).unwrap();
        let out = run(AgentKind::RegretMedFull, &inst, FeedbackKind::Semi, 20_000, 6);
        for w in out.epochs.windows(2) {
            assert!((w[1].epsilon - w[0].epsilon / 2.0).abs() < 1e-12);
        }
        assert!(out.epochs.len() as f64 <= epoch_bound(&inst, 20_000).unwrap());
    }

    #[test]
    fn pure_explore_singleton_returns_within_one_epoch() {
        let inst = Instance::explicit(vec![vec![1.0, 1.0]], vec![0.2, 0.3]).unwrap();
        let out = run(AgentKind::PureExplore, &inst, FeedbackKind::Semi, 1 << 30, 1);
        assert!(out.epochs.len() <= 1);
        assert_eq!(out.recommendation.unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn agent_names_round_trip() {
        for k in AgentKind::ALL {
            assert_eq!(AgentKind::parse(k.name()).unwrap(), k);
        }
        assert!(AgentKind::parse("ucb").is_err());
    }
}
