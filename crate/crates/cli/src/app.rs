//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use terra_active::{ExperimentConfig, PlannerKind, SupervisionMode};

use crate::{config, run};

#[derive(Debug, Parser)]
#[command(name = "terra-active", version, about = "Active learning and informative path planning on synthetic terrain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Simulate(RunArgs),
    /// Run the experiment once per planner.
    ComparePlanners(RunArgs),
    /// Run the experiment under full, semi and self supervision (frontier planner unless --planner).
    CompareSupervision(RunArgs),
    /// Replay a saved run and write its final map layers.
    DumpMap(DumpArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the config's seed list with a single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arms run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// coverage, local, frontier, optimization or sampling
    #[arg(long, value_parser = parse_planner)]
    pub planner: Option<PlannerKind>,
    /// full, semi or self
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SupervisionMode>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/maps`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    s.parse().map_err(|e: terra_active::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<SupervisionMode, String> {
    s.parse().map_err(|e: terra_active::Error| e.to_string())
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = config::parse_config(&self.config).with_context(|| format!("config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            c.seeds = vec![seed];
        }
        if let Some(p) = self.planner {
            c.planner_kind = p;
        }
        if let Some(m) = self.mode {
            c.supervision_mode = m;
        }
        Ok(c)
    }

    fn config_path(&self) -> Option<&Path> {
        Some(&self.config)
    }
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let s = run::simulate(&a.load()?, &a.out, a.config_path(), a.jobs)?;
            println!("final miou {:.4} ± {:.4} over {} arms", s.final_miou.mean, s.final_miou.std, s.arms);
        }
        Command::ComparePlanners(a) => {
            for (name, s) in run::compare_planners(&a.load()?, &a.out, a.config_path(), a.jobs)? {
                println!("{name:<13} final miou {:.4} ± {:.4}", s.final_miou.mean, s.final_miou.std);
            }
        }
        Command::CompareSupervision(a) => {
            let mut c = a.load()?;
            if a.planner.is_none() {
                c.planner_kind = PlannerKind::Frontier;
            }
            for (name, s) in run::compare_supervision(&c, &a.out, a.config_path(), a.jobs)? {
                let human = s.missions.last().map_or(0.0, |m| m.human_pixels.mean);
                println!("{name:<5} final miou {:.4} ± {:.4}, human pixels {human:.0}", s.final_miou.mean, s.final_miou.std);
            }
        }
        Command::DumpMap(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("maps"));
            for dir in run::dump_map(&a.run, &out, a.jobs)? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli(Cli::try_parse_from(args)?)
}
