//! Experiment configs, seeded parallel trial execution, CSV and SVG output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{run_agent, AgentConfig, AgentKind};
use crate::design_full::ConstantProfile;
use crate::error::{Error, Result};
use crate::model::{stream_rng, FeedbackKind};
use crate::oracles::{build_instance, InstanceSpec};

/// Environment variable overriding the config seed.
pub const SEED_ENV: &str = "BANDITLAB_SEED";

/// Default number of points kept per trace.
pub const TRACE_POINTS: u64 = 2000;

/// A horizon given as an integer or as `"<c>/eps^2"` / `"<c>/eps"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonSpec {
    Steps(u64),
    Formula(String),
}

/// A confidence given as a number or as `"<c>/T"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Value(f64),
    Formula(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub name: AgentKind,
    /// Column and file label; defaults to the agent name.
    #[serde(default)]
    pub label: Option<String>,
    /// Overrides of [`AgentConfig`] fields.
    #[serde(default)]
    pub config: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub feedback: FeedbackKind,
    #[serde(rename = "T")]
    pub horizon: HorizonSpec,
    pub delta: DeltaSpec,
    pub trials: u64,
    pub seed: u64,
    pub agents: Vec<AgentEntry>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Normal vectors per Monte Carlo batch in the design solvers.
    #[serde(default)]
    pub mc_samples: Option<usize>,
    #[serde(default)]
    pub constant_profile: ConstantProfile,
    /// Trace subsampling stride; defaults to `max(1, T / 2000)`.
    #[serde(default)]
    pub trace_stride: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `BANDITLAB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not a 64-bit unsigned integer")))?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("at least one agent is required".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep values must be nonempty".into()));
            }
        }
        if self.trace_stride == Some(0) {
            return Err(Error::Config("trace_stride must be positive".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for a in &self.agents {
            let label = a.label.clone().unwrap_or_else(|| a.name.name().to_string());
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("agent label `{label}` must be [A-Za-z0-9_-]+")));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!("duplicate agent label `{label}`")));
            }
        }
        Ok(())
    }
}

/// One agent with its label and fully resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedAgent {
    pub label: String,
    pub kind: AgentKind,
    pub config: AgentConfig,
}

/// A config with formulas, sweep value and agent overrides applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub instance: InstanceSpec,
    pub feedback: FeedbackKind,
    pub horizon: u64,
    pub delta: f64,
    pub trials: u64,
    pub seed: u64,
    pub stride: u64,
    pub agents: Vec<ResolvedAgent>,
    /// `(param, value)` when produced by a sweep.
    pub sweep_point: Option<(String, f64)>,
}

fn instance_eps(spec: &InstanceSpec) -> Option<f64> {
    match spec {
        InstanceSpec::EndOfOptimism { eps } | InstanceSpec::OptimismCounterexample { eps, .. } => Some(*eps),
        _ => None,
    }
}

fn as_count(param: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("sweep value {v} for `{param}` must be a nonnegative integer")))
    }
}

/// Sets `param` on the instance; `T` and `delta` are handled by the caller.
fn apply_instance_param(spec: &InstanceSpec, param: &str, v: f64) -> Result<InstanceSpec> {
    let mut spec = spec.clone();
    let ok = match (&mut spec, param) {
        (InstanceSpec::EndOfOptimism { eps }, "eps") | (InstanceSpec::OptimismCounterexample { eps, .. }, "eps") => {
            *eps = v;
            true
        }
        (InstanceSpec::OptimismCounterexample { m, .. }, "m")
        | (InstanceSpec::TopK { m, .. }, "m")
        | (InstanceSpec::ProductTopK { m, .. }, "m") => {
            *m = as_count(param, v)?;
            true
        }
        (InstanceSpec::TopK { k, .. }, "k")
        | (InstanceSpec::ProductTopK { k, .. }, "k")
        | (InstanceSpec::TopKPlusOnes { k, .. }, "k") => {
            *k = as_count(param, v)?;
            true
        }
        (InstanceSpec::ResourceAllocation { d, .. }, "d") | (InstanceSpec::TopKPlusOnes { d, .. }, "d") => {
            *d = as_count(param, v)?;
            true
        }
        _ => false,
    };
    if ok {
        Ok(spec)
    } else {
        Err(Error::Config(format!("sweep parameter `{param}` does not apply to this instance kind")))
    }
}

/// Parses `"<c>/<var>"` or `"<c>/<var>^<p>"` into `(c, var, p)`.
fn parse_ratio(text: &str) -> Option<(f64, String, i32)> {
    let (num, den) = text.split_once('/')?;
    let c: f64 = num.trim().parse().ok()?;
    let den = den.trim();
    let (var, p) = match den.split_once('^') {
        Some((v, p)) => (v.trim(), p.trim().parse().ok()?),
        None => (den, 1),
    };
    Some((c, var.to_string(), p))
}

fn resolve_horizon(spec: &HorizonSpec, instance: &InstanceSpec) -> Result<u64> {
    let t = match spec {
        HorizonSpec::Steps(t) => *t,
        HorizonSpec::Formula(f) => {
            let (c, var, p) =
                parse_ratio(f).ok_or_else(|| Error::Config(format!("cannot parse horizon formula `{f}`")))?;
            if var != "eps" {
                return Err(Error::Config(format!("horizon formula `{f}` must be in terms of eps")));
            }
            let eps = instance_eps(instance)
                .ok_or_else(|| Error::Config("horizon formula needs an instance with eps".into()))?;
            (c / eps.powi(p)).round() as u64
        }
    };
    if t == 0 {
        return Err(Error::Config("T must be at least 1".into()));
    }
    Ok(t)
}

fn resolve_delta(spec: &DeltaSpec, horizon: u64) -> Result<f64> {
    let d = match spec {
        DeltaSpec::Value(v) => *v,
        DeltaSpec::Formula(f) => match parse_ratio(f) {
            Some((c, var, 1)) if var == "T" => c / horizon as f64,
            _ => return Err(Error::Config(format!("cannot parse delta formula `{f}`"))),
        },
    };
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Config(format!("delta = {d} must lie in (0, 1)")));
    }
    Ok(d)
}

fn merge_tables(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn resolve_agent(entry: &AgentEntry, config: &ExperimentConfig) -> Result<ResolvedAgent> {
    let mut base = AgentConfig { constant_profile: config.constant_profile, ..AgentConfig::default() };
    if let Some(n) = config.mc_samples {
        base.design.mc_samples = n;
    }
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    merge_tables(&mut table, &entry.config);
    let label = entry.label.clone().unwrap_or_else(|| entry.name.name().to_string());
    let agent_config: AgentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("agent `{label}`: {e}")))?;
    Ok(ResolvedAgent { label, kind: entry.name, config: agent_config })
}

/// Resolves formulas, overrides and (optionally) one sweep value.
pub fn resolve(config: &ExperimentConfig, sweep_value: Option<f64>) -> Result<ResolvedRun> {
    config.validate()?;
    let mut instance = config.instance.clone();
    let mut horizon_spec = config.horizon.clone();
    let mut delta_spec = config.delta.clone();
    let mut sweep_point = None;
    if let Some(v) = sweep_value {
        let param = &config.sweep.as_ref().ok_or_else(|| Error::Config("no sweep block".into()))?.param;
        match param.as_str() {
            "T" => horizon_spec = HorizonSpec::Steps(as_count(param, v)? as u64),
            "delta" => delta_spec = DeltaSpec::Value(v),
            p => instance = apply_instance_param(&instance, p, v)?,
        }
        sweep_point = Some((param.clone(), v));
    }
    let horizon = resolve_horizon(&horizon_spec, &instance)?;
    let delta = resolve_delta(&delta_spec, horizon)?;
    let agents = config.agents.iter().map(|a| resolve_agent(a, config)).collect::<Result<Vec<_>>>()?;
    Ok(ResolvedRun {
        instance,
        feedback: config.feedback,
        horizon,
        delta,
        trials: config.trials,
        seed: config.seed,
        stride: config.trace_stride.unwrap_or((horizon / TRACE_POINTS).max(1)),
        agents,
        sweep_point,
    })
}

/// Outcome of one (agent, trial) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub agent: String,
    pub trial: u64,
    /// `(step, cum_regret)` at the stride, always ending at the last step.
    #[serde(skip)]
    pub points: Vec<(u64, f64)>,
    pub final_regret: f64,
    pub samples: u64,
    pub epochs: usize,
    pub recommendation: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Executes every (agent, trial) cell. Trial `t` of agent `a` draws from
/// `stream_rng(seed, a, t)`, split into an environment stream and an agent
/// stream, so results do not depend on scheduling or thread count.
pub fn execute(run: &ResolvedRun, threads: Option<usize>) -> Result<Vec<CellResult>> {
    let instance = build_instance(&run.instance)?;
    let cells: Vec<(usize, u64)> = (0..run.agents.len()).flat_map(|a| (0..run.trials).map(move |t| (a, t))).collect();
    let work = || {
        cells
            .par_iter()
            .map(|&(a, t)| {
                let agent = &run.agents[a];
                let mut master = stream_rng(run.seed, &agent.label, t);
                let env_rng = ChaCha8Rng::from_rng(&mut master);
                let res = run_agent(
                    agent.kind,
                    &instance,
                    run.feedback,
                    run.horizon,
                    run.delta,
                    &agent.config,
                    env_rng,
                    &mut master,
                );
                match res {
                    Ok(out) => CellResult {
                        agent: agent.label.clone(),
                        trial: t,
                        points: out.trace.strided(run.stride as usize),
                        final_regret: out.trace.final_regret(),
                        samples: out.samples(),
                        epochs: out.epochs.len(),
                        recommendation: out.recommendation,
                        error: None,
                    },
                    Err(e) => CellResult {
                        agent: agent.label.clone(),
                        trial: t,
                        points: Vec::new(),
                        final_regret: f64::NAN,
                        samples: 0,
                        epochs: 0,
                        recommendation: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect::<Vec<_>>()
    };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Sweep value; `None` outside sweeps.
    pub param_value: Option<f64>,
    pub agent: String,
    pub mean_final_regret: f64,
    /// Sample standard deviation over `sqrt(trials)`.
    pub std_err: f64,
    pub trials: u64,
}

/// Mean and standard error of `xs` (`std_err = 0` for one value).
pub fn mean_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row per agent, over the trials that completed, in agent order.
pub fn summarize(run: &ResolvedRun, cells: &[CellResult]) -> Vec<SummaryRow> {
    run.agents
        .iter()
        .map(|a| {
            let finals: Vec<f64> =
                cells.iter().filter(|c| c.agent == a.label && c.error.is_none()).map(|c| c.final_regret).collect();
            let (mean, se) = mean_std_err(&finals);
            SummaryRow {
                param_value: run.sweep_point.as_ref().map(|p| p.1),
                agent: a.label.clone(),
                mean_final_regret: mean,
                std_err: se,
                trials: finals.len() as u64,
            }
        })
        .collect()
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, e)
}

/// Writes `traces_<agent>.csv` files with header `trial,step,cum_regret`.
pub fn write_traces(dir: &Path, run: &ResolvedRun, cells: &[CellResult]) -> Result<()> {
    for a in &run.agents {
        let path = dir.join(format!("traces_{}.csv", a.label));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["trial", "step", "cum_regret"]).map_err(|e| csv_err(&path, e))?;
        for c in cells.iter().filter(|c| c.agent == a.label) {
            for (s, v) in &c.points {
                w.write_record([c.trial.to_string(), s.to_string(), v.to_string()]).map_err(|e| csv_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| csv_err(&path, e))?;
    }
    Ok(())
}

/// Writes `summary.csv`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["param_value", "agent", "mean_final_regret", "std_err", "trials"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.param_value.map(|v| v.to_string()).unwrap_or_default(),
            r.agent.clone(),
            r.mean_final_regret.to_string(),
            r.std_err.to_string(),
            r.trials.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    rng: &'static str,
    runs: Vec<ManifestRun<'a>>,
}

#[derive(Serialize)]
struct ManifestRun<'a> {
    directory: String,
    config: &'a ResolvedRun,
    cells: &'a [CellResult],
}

fn write_manifest(path: &Path, runs: &[(String, ResolvedRun, Vec<CellResult>)]) -> Result<()> {
    let m = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        rng: "ChaCha8 keyed by sha256(seed, agent label, trial); environment stream split off first",
        runs: runs.iter().map(|(dir, config, cells)| ManifestRun { directory: dir.clone(), config, cells }).collect(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Files and rows produced by a run or sweep.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    /// `(agent, trial, message)` of failed cells.
    pub errors: Vec<(String, u64, String)>,
}

fn collect_errors(cells: &[CellResult]) -> Vec<(String, u64, String)> {
    cells.iter().filter_map(|c| c.error.as_ref().map(|e| (c.agent.clone(), c.trial, e.clone()))).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs every agent for every trial and writes traces, summary and manifest
/// into `out_dir`. Failed cells are reported and skipped in the summary.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunReport> {
    let run = resolve(config, None)?;
    create_dir(out_dir)?;
    let cells = execute(&run, threads)?;
    write_traces(out_dir, &run, &cells)?;
    let summary = summarize(&run, &cells);
    write_summary(&out_dir.join("summary.csv"), &summary)?;
    let errors = collect_errors(&cells);
    write_manifest(&out_dir.join("manifest.json"), &[(".".to_string(), run, cells)])?;
    Ok(RunReport { out_dir: out_dir.to_path_buf(), summary, errors })
}

/// Runs one experiment per sweep value in `<out_dir>/<param>=<value>/` and
/// writes the merged `summary.csv` and manifest into `out_dir`.
pub fn sweep(config: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunReport> {
    let spec = config.sweep.as_ref().ok_or_else(|| Error::Config("sweep needs a [sweep] block".into()))?;
    let runs = spec.values.iter().map(|v| resolve(config, Some(*v))).collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;
    let mut summary = Vec::new();
    let mut errors = Vec::new();
    let mut manifest = Vec::new();
    for run in runs {
        let (param, v) = run.sweep_point.clone().expect("sweep runs carry their point");
        let name = format!("{param}={v}");
        let dir = out_dir.join(&name);
        create_dir(&dir)?;
        let cells = execute(&run, threads)?;
        write_traces(&dir, &run, &cells)?;
        let rows = summarize(&run, &cells);
        write_summary(&dir.join("summary.csv"), &rows)?;
        summary.extend(rows);
        errors.extend(collect_errors(&cells));
        manifest.push((name, run, cells));
    }
    write_summary(&out_dir.join("summary.csv"), &summary)?;
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(RunReport { out_dir: out_dir.to_path_buf(), summary, errors })
}

fn parse_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Parse { line, msg: format!("{}: {msg}", path.display()) }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e))?;
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(path, line, format!("bad or missing field {}", i + 1)))
}

/// Reads a trace CSV into `trial -> [(step, cum_regret)]`.
pub fn read_traces(path: &Path) -> Result<BTreeMap<u64, Vec<(u64, f64)>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    check_header(path, &mut rdr, &["trial", "step", "cum_regret"])?;
    let mut out: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let trial: u64 = field(path, &rec, 0, line)?;
        let step: u64 = field(path, &rec, 1, line)?;
        let value: f64 = field(path, &rec, 2, line)?;
        out.entry(trial).or_default().push((step, value));
    }
    Ok(out)
}

/// Reads a `summary.csv`.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    check_header(path, &mut rdr, &["param_value", "agent", "mean_final_regret", "std_err", "trials"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(parse_err(path, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let param_value = match rec.get(0) {
            Some("") => None,
            _ => Some(field(path, &rec, 0, line)?),
        };
        out.push(SummaryRow {
            param_value,
            agent: rec[1].to_string(),
            mean_final_regret: field(path, &rec, 2, line)?,
            std_err: field(path, &rec, 3, line)?,
            trials: field(path, &rec, 4, line)?,
        });
    }
    Ok(out)
}

/// One plotted curve: `(x, mean, half_width)` per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
    /// Whether a band (more than one trial) is drawn.
    pub band: bool,
}

/// Mean regret per step across trials with one-standard-error half-widths.
pub fn trace_curve(label: &str, traces: &BTreeMap<u64, Vec<(u64, f64)>>) -> Curve {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for pts in traces.values() {
        for (s, v) in pts {
            by_step.entry(*s).or_default().push(*v);
        }
    }
    let points = by_step
        .into_iter()
        .map(|(s, vs)| {
            let (m, se) = mean_std_err(&vs);
            (s as f64, m, se)
        })
        .collect();
    Curve { label: label.to_string(), points, band: traces.len() > 1 }
}

/// Final regret against the sweep value, one curve per agent.
pub fn sweep_curves(rows: &[SummaryRow]) -> Result<Vec<Curve>> {
    let mut by_agent: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let x = r.param_value.ok_or_else(|| Error::InvalidInput("summary has no sweep values".into()))?;
        if !by_agent.contains_key(&r.agent) {
            order.push(r.agent.clone());
        }
        by_agent.entry(r.agent.clone()).or_default().push((x, r.mean_final_regret, r.std_err));
    }
    Ok(order
        .into_iter()
        .map(|a| {
            let mut pts = by_agent.remove(&a).unwrap_or_default();
            pts.sort_by(|p, q| p.0.total_cmp(&q.0));
            let band = rows.iter().any(|r| r.agent == a && r.trials > 1);
            Curve { label: a, points: pts, band }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotStyle {
    /// Cumulative regret against time from `traces_*.csv`.
    Curves,
    /// Final regret against the sweep value from `summary.csv`.
    Sweep,
}

/// Loads the curves for `style` from a results directory.
pub fn load_curves(input: &Path, style: PlotStyle) -> Result<Vec<Curve>> {
    match style {
        PlotStyle::Curves => {
            let mut files: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("traces_") && n.ends_with(".csv"))
                })
                .collect();
            files.sort();
            let mut curves = Vec::new();
            for f in files {
                let traces = read_traces(&f)?;
                if traces.is_empty() {
                    continue;
                }
                let name = f.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
                curves.push(trace_curve(name.trim_start_matches("traces_"), &traces));
            }
            Ok(curves)
        }
        PlotStyle::Sweep => sweep_curves(&read_summary(&input.join("summary.csv"))?),
    }
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, format!("plot: {e}"))
}

/// Renders curves (mean line plus one-standard-error band) to an SVG file.
pub fn render_svg(curves: &[Curve], output: &Path, style: PlotStyle) -> Result<()> {
    use plotters::prelude::*;
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::InvalidInput("nothing to plot: no traces".into()));
    }
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for (x, m, h) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y1 = y1.max(m + h);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let (xdesc, title) = match style {
        PlotStyle::Curves => ("step", "cumulative regret"),
        PlotStyle::Sweep => ("sweep value", "final regret"),
    };
    let root = SVGBackend::new(output, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(output, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, 0.0..y1 * 1.05)
        .map_err(|e| plot_err(output, e))?;
    chart.configure_mesh().x_desc(xdesc).y_desc(title).draw().map_err(|e| plot_err(output, e))?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if c.band && c.points.len() > 1 {
            let mut poly: Vec<(f64, f64)> = c.points.iter().map(|(x, m, h)| (*x, m + h)).collect();
            poly.extend(c.points.iter().rev().map(|(x, m, h)| (*x, (m - h).max(0.0))));
            chart
                .draw_series(std::iter::once(Polygon::new(poly, color.mix(0.2).filled())))
                .map_err(|e| plot_err(output, e))?;
        }
        chart
            .draw_series(LineSeries::new(c.points.iter().map(|(x, m, _)| (*x, *m)), color.stroke_width(2)))
            .map_err(|e| plot_err(output, e))?
            .label(c.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(|e| plot_err(output, e))?;
    root.present().map_err(|e| plot_err(output, e))?;
    Ok(())
}

/// Reads the CSVs under `input` and writes an SVG to `output`.
pub fn emit_plot(input: &Path, output: &Path, style: PlotStyle) -> Result<()> {
    let curves = load_curves(input, style)?;
    if curves.is_empty() {
        return Err(Error::InvalidInput(format!("no traces found in {}", input.display())));
    }
    render_svg(&curves, output, style)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
feedback = "semi"
T = 200
delta = "1/T"
trials = 2
seed = 7
agents = [{ name = "combucb1" }, { name = "regret_med_full", config = { constraint_scale = 2.0 } }]

[instance]
kind = "explicit"
arms = [[1.0, 1.0]]
theta = [0.5, 0.25]
"#;

    #[test]
    fn parses_and_resolves_formulas() {
        let text = r#"
feedback = "bandit"
T = "25/eps^2"
delta = "1/T"
trials = 3
seed = 1
agents = [{ name = "linucb" }]

[instance]
kind = "end_of_optimism"
eps = 0.05
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let r = resolve(&c, None).unwrap();
        assert_eq!(r.horizon, 10_000);
        assert!((r.delta - 1e-4).abs() < 1e-18);
        assert_eq!(r.stride, 5);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{BASE}\nextra = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let bad_agent = BASE.replace("constraint_scale", "constraint_scal");
        let c = ExperimentConfig::from_toml(&bad_agent).unwrap();
        assert!(matches!(resolve(&c, None), Err(Error::Config(_))));
    }

    #[test]
    fn agent_overrides_apply() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let r = resolve(&c, None).unwrap();
        assert_eq!(r.agents[0].config, AgentConfig::default());
        assert_eq!(r.agents[1].config.constraint_scale, 2.0);
    }

    #[test]
    fn sweep_param_must_apply() {
        let text = format!("{BASE}\n[sweep]\nparam = \"eps\"\nvalues = [0.1]\n");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(resolve(&c, Some(0.1)), Err(Error::Config(_))));
        let empty = format!("{BASE}\n[sweep]\nparam = \"T\"\nvalues = []\n");
        assert!(ExperimentConfig::from_toml(&empty).is_err());
    }

    #[test]
    fn singleton_run_is_all_zero() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let dir = std::env::temp_dir().join(format!("banditlab-h-{}", std::process::id()));
        let rep = run_experiment(&c, &dir, Some(1)).unwrap();
        assert!(rep.errors.is_empty());
        for row in &rep.summary {
            assert_eq!(row.mean_final_regret, 0.0);
            assert_eq!(row.std_err, 0.0);
            assert_eq!(row.trials, 2);
        }
        let traces = read_traces(&dir.join("traces_combucb1.csv")).unwrap();
        assert!(traces.values().flatten().all(|p| p.1 == 0.0));
        assert_eq!(traces[&0].last().unwrap().0, 200);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mean_and_std_err() {
        let (m, se) = mean_std_err(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std_err(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = std::env::temp_dir().join(format!("banditlab-csv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("traces_x.csv");
        fs::write(&p, "trial,step,cum_regret\n0,1,0.5\n0,two,1.0\n").unwrap();
        match read_traces(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn curve_band_matches_std_err() {
        let mut t = BTreeMap::new();
        t.insert(0, vec![(1, 1.0), (2, 2.0)]);
        t.insert(1, vec![(1, 3.0), (2, 6.0)]);
        let c = trace_curve("a", &t);
        assert!(c.band);
        assert_eq!(c.points[1], (2.0, 4.0, mean_std_err(&[2.0, 6.0]).1));
        let mut one = BTreeMap::new();
        one.insert(0, vec![(1, 1.0)]);
        let c = trace_curve("b", &one);
        assert!(!c.band);
        assert_eq!(c.points, vec![(1.0, 1.0, 0.0)]);
    }

    #[test]
    fn empty_curves_are_an_error() {
        let out = std::env::temp_dir().join("banditlab-empty.svg");
        assert!(render_svg(&[], &out, PlotStyle::Curves).is_err());
    }
}
