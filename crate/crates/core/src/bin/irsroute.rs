use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use irsroute::channel::synthesize_channels;
use irsroute::codebook::Codebooks;
use irsroute::harness::{
    preset_scenario, realization_seed, run_experiment, summarize, summary_table, to_csv, ExperimentConfig, Scheme,
    Sweep,
};
use irsroute::scene::{build_los_graph, Scene};
use irsroute::training::{train_distributed, MeasurementCounter, TrainingConfig};

#[derive(Parser)]
#[command(name = "irsroute", version, about = "Multi-IRS beam training and beam routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Built-in scenario: paper-indoor, toy-chain or toy-parallel.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<(Scene, ExperimentConfig)> {
        match (&self.preset, &self.config) {
            (Some(name), None) => Ok(preset_scenario(name)?),
            (None, Some(path)) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display())),
            _ => bail!("pass exactly one of --preset or --config"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write the result CSV.
    Run {
        #[command(flatten)]
        source: Source,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of distributed,sequential,exhaustive.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        /// NAME=V1,V2,... with NAME one of m0, rician_k, user_location.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        realizations: Option<usize>,
        /// Print a summary table to standard error.
        #[arg(long)]
        summary: bool,
    },
    /// Print the LoS graph edges for one user location.
    Graph {
        #[command(flatten)]
        source: Source,
        /// 1-based user location.
        #[arg(long, default_value_t = 1)]
        user: usize,
    },
    /// Train one realization and dump the beam routing tables.
    Brt {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1)]
        user: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        realization: usize,
        /// Square IRS size; the preset default when omitted.
        #[arg(long)]
        m0: Option<usize>,
    },
}

fn user_index(scene: &Scene, user: usize) -> Result<usize> {
    if user == 0 || user > scene.user_positions.len() {
        bail!("user location {user} does not exist (scene has {})", scene.user_positions.len());
    }
    Ok(user - 1)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { source, out, seed, schemes, sweep, realizations, summary } => {
            let (scene, mut cfg) = source.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(list) = schemes {
                cfg.schemes = list.iter().map(|s| s.parse::<Scheme>()).collect::<irsroute::Result<_>>()?;
            }
            if let Some(s) = sweep {
                cfg.sweep = s.parse::<Sweep>()?;
            }
            if let Some(r) = realizations {
                cfg.realizations = r;
            }
            let rows = run_experiment(&scene, &cfg)?;
            let csv = to_csv(&rows);
            match out.or(cfg.output.clone()) {
                Some(path) => {
                    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
                    info!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => print!("{csv}"),
            }
            if summary {
                eprint!("{}", summary_table(&summarize(&rows)?));
            }
        }
        Command::Graph { source, user } => {
            let (scene, _) = source.load()?;
            let graph = build_los_graph(&scene, user_index(&scene, user)?)?;
            print!("{graph}");
        }
        Command::Brt { source, user, seed, realization, m0 } => {
            let (scene, cfg) = source.load()?;
            let scene = match m0.or(cfg.m0) {
                Some(m) => scene.with_square_irs(m),
                None => scene,
            };
            let graph = build_los_graph(&scene, user_index(&scene, user)?)?;
            let rs = realization_seed(seed, realization);
            let channel = irsroute::channel::ChannelConfig { rng_seed: rs, ..cfg.channel };
            let channels = synthesize_channels(&scene, &graph, &channel)?;
            let cb = Codebooks::for_scene(&scene, cfg.codebooks.bs, cfg.codebooks.horizontal, cfg.codebooks.vertical)?;
            let mut counter = MeasurementCounter::default();
            let brts =
                train_distributed(&channels, &cb, &mut counter, &TrainingConfig { seed: rs, ..Default::default() })?;
            print!("{}", brts.to_text());
            info!("{counter:?}");
        }
    }
    Ok(())
}
