use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use banditlab::agents::{AgentConfig, AgentKind};
use banditlab::error::Error;
use banditlab::harness::ExperimentConfig;
use banditlab::model::{stream_rng, Allocation, ArmSet, FeedbackKind};
use banditlab::oracles::{build_instance, EnumeratedOracle, Instance, InstanceSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidSpec(_)
        | Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::Coverage { .. }
        | Error::NotEnumerable(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn feedback(name: &str) -> PyResult<FeedbackKind> {
    match name {
        "bandit" => Ok(FeedbackKind::Bandit),
        "semi" | "semi_bandit" => Ok(FeedbackKind::Semi),
        _ => Err(PyValueError::new_err(format!("unknown feedback `{name}`; use bandit or semi"))),
    }
}

fn instance(spec_json: &str) -> PyResult<Instance> {
    let spec: InstanceSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    build_instance(&spec).map_err(to_py)
}

/// Agent identifiers accepted by `run_agent` and experiment configs.
#[pyfunction]
fn agent_names() -> Vec<&'static str> {
    AgentKind::ALL.iter().map(|a| a.name()).collect()
}

/// Runs one agent once. `instance` is a JSON instance spec, `config` an
/// optional JSON object of agent settings.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (agent, instance, feedback, horizon, delta, seed, config=None))]
fn run_agent<'py>(
    py: Python<'py>,
    agent: &str,
    instance: &str,
    feedback: &str,
    horizon: u64,
    delta: f64,
    seed: u64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = AgentKind::parse(agent).map_err(to_py)?;
    let inst = self::instance(instance)?;
    let fb = self::feedback(feedback)?;
    let cfg: AgentConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => AgentConfig::default(),
    };
    let out = py
        .detach(|| {
            let mut rng = stream_rng(seed, kind.name(), 0);
            let env_rng = ChaCha8Rng::from_rng(&mut rng);
            banditlab::agents::run_agent(kind, &inst, fb, horizon, delta, &cfg, env_rng, &mut rng)
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("final_regret", out.trace.final_regret())?;
    d.set_item("samples", out.samples())?;
    d.set_item("epochs", out.epochs.len())?;
    d.set_item("cum_regret", out.trace.cum_regret.clone())?;
    d.set_item("recommendation", out.recommendation)?;
    Ok(d)
}

/// Runs an experiment from TOML text into `out_dir`; returns the summary rows.
#[pyfunction]
#[pyo3(signature = (config, out_dir, threads=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: &str,
    threads: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let rep = py.detach(|| banditlab::harness::run_experiment(&cfg, Path::new(out_dir), threads)).map_err(to_py)?;
    rep.summary
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("param_value", r.param_value)?;
            d.set_item("agent", &r.agent)?;
            d.set_item("mean_final_regret", r.mean_final_regret)?;
            d.set_item("std_err", r.std_err)?;
            d.set_item("trials", r.trials)?;
            Ok(d)
        })
        .collect()
}

/// Semi-bandit G-optimal design: `(weights, max squared norm)`.
#[pyfunction]
#[pyo3(signature = (arms, budget=2000))]
fn g_optimal_semi(arms: Vec<Vec<f64>>, budget: usize) -> PyResult<(Vec<f64>, f64)> {
    banditlab::design_full::g_optimal_semi(&arms, budget).map_err(to_py)
}

/// Caratheodory sparsification of dense weights over `arms`; returns
/// `(index, weight)` pairs.
#[pyfunction]
fn sparsify(arms: Vec<Vec<f64>>, weights: Vec<f64>, feedback: &str) -> PyResult<Vec<(usize, f64)>> {
    let alloc = Allocation::from_dense(&weights).map_err(to_py)?;
    let out = banditlab::rounding::sparsify(&alloc, self::feedback(feedback)?, &arms).map_err(to_py)?;
    Ok(out.allocation.entries().to_vec())
}

/// Gap between the empirical leader and the best arm dropping one of its
/// coordinates: `(gap, leader)`.
#[pyfunction]
fn mingap(theta: Vec<f64>, arms: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    let oracle = EnumeratedOracle::new(ArmSet::new(arms).map_err(to_py)?);
    banditlab::oracles::mingap(&theta, &oracle).map_err(to_py)
}

/// Value of the asymptotic lower-bound program for binary arms.
#[pyfunction]
fn asymptotic_lb(arms: Vec<Vec<f64>>, theta: Vec<f64>) -> PyResult<f64> {
    let inst = Instance::explicit(arms, theta).map_err(to_py)?;
    banditlab::gwidth::asymptotic_lb(&inst).map_err(to_py)
}

#[pymodule]
fn pybanditlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(agent_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_agent, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(g_optimal_semi, m)?)?;
    m.add_function(wrap_pyfunction!(sparsify, m)?)?;
    m.add_function(wrap_pyfunction!(mingap, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_lb, m)?)?;
    Ok(())
}
