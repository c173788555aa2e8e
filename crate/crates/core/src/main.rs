use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use banditlab::agents::first_epoch_design;
use banditlab::error::Error;
use banditlab::gwidth::gamma_bar_grid;
use banditlab::harness::{emit_plot, resolve, run_experiment, sweep, ExperimentConfig, PlotStyle, RunReport};
use banditlab::model::stream_rng;
use banditlab::oracles::build_instance;

#[derive(Parser)]
#[command(
    name = "banditlab",
    version,
    about = "Experimental-design regret minimization for linear and combinatorial bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every agent for every trial.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run once per value of the config's sweep block.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Solve the first agent's first-epoch design; prints `arm_index,weight`
    /// CSV followed by a JSON summary line.
    Design {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the Gaussian-width grid as `epsilon,gamma_bar_estimate,std_err`.
    Gw {
        #[arg(long)]
        config: PathBuf,
        /// Normal vectors per grid point; defaults to `mc_samples` or 2000.
        #[arg(long)]
        samples: Option<usize>,
        /// Frank-Wolfe iterations per grid point.
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
    /// Render an SVG from the CSVs in a results directory.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Style::Curves)]
        style: Style,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Curves,
    Sweep,
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidSpec(_))
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })?;
    config.apply_env()?;
    Ok(config)
}

fn report(rep: &RunReport) {
    for (agent, trial, msg) in &rep.errors {
        eprintln!("agent {agent} trial {trial} failed: {msg}");
    }
    println!("wrote {}", rep.out_dir.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    let stdout = std::io::stdout();
    let out_err = |e: std::io::Error| Error::InvalidInput(format!("stdout: {e}"));
    match cli.command {
        Command::Run { config, out, threads } => {
            let c = load(&config)?;
            let dir = out.unwrap_or_else(|| c.output_dir.clone());
            report(&run_experiment(&c, &dir, threads)?);
        }
        Command::Sweep { config, out, threads } => {
            let c = load(&config)?;
            let dir = out.unwrap_or_else(|| c.output_dir.clone());
            report(&sweep(&c, &dir, threads)?);
        }
        Command::Design { config } => {
            let c = load(&config)?;
            let r = resolve(&c, None)?;
            let instance = build_instance(&r.instance)?;
            let agent = &r.agents[0];
            let mut rng = stream_rng(r.seed, "design", 0);
            let sol =
                first_epoch_design(agent.kind, &instance, r.feedback, r.horizon, r.delta, &agent.config, &mut rng)?;
            let mut w = stdout.lock();
            writeln!(w, "arm_index,weight").map_err(out_err)?;
            for (i, wt) in &sol.weights {
                writeln!(w, "{i},{wt}").map_err(out_err)?;
            }
            let summary = serde_json::json!({
                "agent": agent.label,
                "epsilon": sol.epsilon,
                "objective": sol.objective,
                "constraint": sol.constraint,
                "feasible": sol.feasible,
                "support": sol.weights.len(),
                "oracle_calls": sol.oracle_calls,
            });
            writeln!(w, "{summary}").map_err(out_err)?;
        }
        Command::Gw { config, samples, budget } => {
            let c = load(&config)?;
            let r = resolve(&c, None)?;
            let instance = build_instance(&r.instance)?;
            let n = samples.or(c.mc_samples).unwrap_or(2000);
            let mut rng = stream_rng(r.seed, "gw", 0);
            let grid = gamma_bar_grid(&instance, r.feedback, n, budget, &mut rng)?;
            let mut w = stdout.lock();
            writeln!(w, "epsilon,gamma_bar_estimate,std_err").map_err(out_err)?;
            for p in grid {
                writeln!(w, "{},{},{}", p.epsilon, p.estimate, p.std_err).map_err(out_err)?;
            }
        }
        Command::Plot { input, out, style } => {
            let style = match style {
                Style::Curves => PlotStyle::Curves,
                Style::Sweep => PlotStyle::Sweep,
            };
            emit_plot(&input, &out, style)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
