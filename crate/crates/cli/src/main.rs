use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use learnff::experiment::{self, CellKey, ExperimentConfig};
use learnff::trajgen::{sample_uniform, write_csv};
use learnff::{DisturbanceSet, Strategy};

#[derive(Parser)]
#[command(name = "learnff", version, about = "Feedforward strategies with learned error models on a planar multirotor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix and write summary, logs and models.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one cell, e.g. `D:FF5`. May be repeated.
        #[arg(long, value_name = "SET:STRATEGY")]
        only: Vec<String>,
        /// Feedback modes to run; overrides the config.
        #[arg(long, value_enum)]
        feedback: Option<Feedback>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the tables from an existing summary.csv.
    Table {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the configured reference trajectory to CSV.
    Traj {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample spacing in seconds; defaults to the simulation step.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Feedback {
    On,
    Off,
    Both,
}

fn parse_only(s: &str) -> Result<(DisturbanceSet, Strategy)> {
    let (set, strategy) = s
        .split_once(':')
        .with_context(|| format!("--only expects SET:STRATEGY, got `{s}`"))?;
    Ok((set.parse()?, strategy.parse()?))
}

fn load(config: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => experiment::parse_config(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(config: PathBuf, only: Vec<String>, feedback: Option<Feedback>, out: Option<PathBuf>) -> Result<bool> {
    let mut cfg = load(Some(&config))?;
    if let Some(fb) = feedback {
        cfg.feedback_modes = match fb {
            Feedback::On => vec![true],
            Feedback::Off => vec![false],
            Feedback::Both => vec![false, true],
        };
    }
    let mut keys = cfg.cells();
    if !only.is_empty() {
        let wanted = only.iter().map(|s| parse_only(s)).collect::<Result<Vec<_>>>()?;
        keys.retain(|k: &CellKey| wanted.contains(&(k.set, k.strategy)));
        if keys.is_empty() {
            bail!("--only selects no configured cell");
        }
    }
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = experiment::run_cells(&cfg, &keys);
    experiment::write_artifacts(&outcome, &dir)
        .with_context(|| format!("writing results to {}", dir.display()))?;

    for fb in [false, true] {
        let table = outcome.table(fb);
        if !table.cells.is_empty() {
            println!("{}", table.render());
        }
    }
    for (key, res) in &outcome.cells {
        if let Err(e) = res {
            eprintln!("cell {key} failed: {e}");
        }
    }
    println!("results written to {}", dir.display());
    Ok(outcome.failed() == 0)
}

fn table(out: PathBuf) -> Result<bool> {
    let (open_loop, closed_loop) = experiment::read_summary(&out)
        .with_context(|| format!("reading summary in {}", out.display()))?;
    for t in [&open_loop, &closed_loop] {
        if !t.cells.is_empty() {
            println!("{}", t.render());
        }
    }
    Ok(open_loop.failed() + closed_loop.failed() == 0)
}

fn traj(config: Option<PathBuf>, step: Option<f64>, out: PathBuf) -> Result<bool> {
    let cfg = load(config.as_ref())?;
    let seg = cfg.trajectory.segment()?;
    let samples = sample_uniform(&seg, step.unwrap_or(cfg.sim.dt))?;
    let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&samples, std::io::BufWriter::new(file))?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            only,
            feedback,
            out,
        } => run(config, only, feedback, out),
        Command::Table { out } => table(out),
        Command::Traj { config, step, out } => traj(config, step, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
