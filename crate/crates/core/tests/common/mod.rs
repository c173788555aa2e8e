//! Random semi-bandit programs and the enumeration reference optimum shared
//! by the solver tests and the acceptance suite.

#![allow(dead_code)]

use banditlab::design_full::{solve_design, DesignConfig, DesignProblem, Variant};
use banditlab::gwidth::{estimate_sup_oracle, NormalBatch};
use banditlab::model::{dot, stream_rng, ArmSet, FeedbackKind};
use banditlab::oracle_opt::{solve_main, OptConfig, SemiProgram};
use banditlab::oracles::{EnumeratedOracle, LinMaxOracle};
use rand::Rng;

pub fn random_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream_rng(seed, "instance", 0);
    let d = rng.random_range(3..=6);
    let m = rng.random_range(d..=12).min((1 << d) - 1);
    loop {
        let mut arms: Vec<Vec<f64>> = Vec::new();
        while arms.len() < m {
            let a: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            if a.iter().any(|v| *v != 0.0) && !arms.contains(&a) {
                arms.push(a);
            }
        }
        if (0..d).all(|k| arms.iter().any(|a| a[k] != 0.0)) {
            let theta = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            return (arms, theta);
        }
    }
}

/// Reference optimum of the generic program from the enumeration solver.
pub fn reference_opt(arms: &[Vec<f64>], p: &SemiProgram, seed: u64) -> f64 {
    let gaps: Vec<f64> = arms.iter().map(|x| dot(&p.theta_bar, &p.x_bar) - dot(&p.theta_bar, x)).collect();
    let problem = DesignProblem {
        epsilon: p.beta,
        gaps,
        leader: p.x_bar.clone(),
        delta: 0.1,
        epoch: 1,
        feedback: FeedbackKind::Semi,
        variant: Variant::Relaxed,
        constant: p.c,
    };
    let mut rng = stream_rng(seed, "reference", 0);
    let sol = solve_design(&problem, arms, &DesignConfig { fw_iters: 400, mc_samples: 4000 }, &mut rng).unwrap();
    let total = sol.allocation.total();
    let lin = sol.objective / (2.0 * total) - p.beta;
    total.max(1.0) * (p.beta + lin)
}

pub fn solver_config() -> OptConfig {
    OptConfig { max_mw_rounds: 60, max_sfw_iters: 40, max_mc_batch: 64, verify_samples: 2000, ..OptConfig::default() }
}

/// Outcome of one seeded solver run against the reference.
pub struct ContractCheck {
    pub feasible: bool,
    pub objective: f64,
    pub opt: f64,
    /// Fresh-sample constraint mean at the returned weights.
    pub check: f64,
    /// `sqrt(tau_bar) * C`.
    pub bound: f64,
}

pub fn contract_check(seed: u64, verify_samples: usize) -> ContractCheck {
    let (arms, theta) = random_instance(seed);
    let oracle = EnumeratedOracle::new(ArmSet::new(arms.clone()).unwrap());
    let x_bar = oracle.argmax(&theta).unwrap();
    let p = SemiProgram { x_bar, theta_bar: theta, beta: 0.5, c: 1.0, horizon: 1024, delta_max: 2.0 };
    let opt = reference_opt(&arms, &p, seed);
    let mut rng = stream_rng(seed, "solver", 0);
    let rep = solve_main(&p, 0.1, &oracle, &solver_config(), &mut rng).unwrap();
    let d = p.x_bar.len();
    let mut a = vec![0.0; d];
    for (x, w) in rep.arms.iter().zip(&rep.lambda_bar) {
        for k in 0..d {
            a[k] += w * x[k];
        }
    }
    let batch = NormalBatch::draw(verify_samples, d, &mut rng);
    let check = estimate_sup_oracle(&a, &p.x_bar, &p.theta_bar, p.beta, &oracle, &batch).unwrap();
    ContractCheck {
        feasible: rep.feasible,
        objective: rep.objective,
        opt,
        check: check.mean,
        bound: rep.tau_bar.sqrt() * p.c,
    }
}
