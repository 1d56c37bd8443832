//! Command-line front end: detection, mouth extraction, dataset splitting,
//! training, evaluation and report merging.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use emorec_core::haar::{DetectParams, DEFAULT_GROUP_EPS};

use crate::commands::{
    cmd_detect, cmd_eval, cmd_extract, cmd_report, cmd_split, cmd_train, DetectArgs, EvalSplit, ExtractArgs, Status,
};
use crate::config::{parse_min_size, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "emorec", version, about = "Mouth-region emotion recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DetectorFlags {
    /// Pyramid step between window scales.
    #[arg(long)]
    pub scale_factor: Option<f64>,
    /// Minimum grouped neighbors for a detection to be kept.
    #[arg(long)]
    pub min_neighbors: Option<usize>,
    /// Smallest face window, `N` or `WxH`.
    #[arg(long, value_parser = parse_min_size)]
    pub min_size: Option<(usize, usize)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect faces and print `file,x,y,w,h,neighbors` rows.
    Detect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[command(flatten)]
        detector: DetectorFlags,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Crop the mouth of the largest face in every graymap of a directory.
    Extract {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[arg(long)]
        mouth_cascade: Option<PathBuf>,
        #[command(flatten)]
        detector: DetectorFlags,
        #[arg(long)]
        out: PathBuf,
        input_dir: PathBuf,
    },
    /// Print the train/validation/test assignment of every sample.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network, writing checkpoints and the training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        positive_class: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// all, train, validation or test.
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        positive_class: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge training logs and mark the best row of each.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn with_overrides(mut cfg: RunConfig, seed: Option<u64>, positive: Option<&String>) -> RunConfig {
    if let Some(s) = seed {
        cfg.solver.seed = s;
    }
    if let Some(p) = positive {
        cfg.positive_class = Some(p.clone());
    }
    cfg
}

fn detect_params(cfg: &RunConfig, flags: &DetectorFlags) -> DetectParams {
    DetectParams {
        scale_factor: flags.scale_factor.unwrap_or(cfg.scale_factor),
        min_neighbors: flags.min_neighbors.unwrap_or(cfg.min_neighbors),
        group_eps: DEFAULT_GROUP_EPS,
        min_size: flags.min_size.or(cfg.min_size),
    }
}

fn required(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or(from_config) {
        Some(p) => Ok(p.clone()),
        None => bail!("no {what} given"),
    }
}

/// Runs one command. Errors are usage or I/O failures; domain failures come
/// back as [`Status::DomainFailure`].
pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Detect {
            config,
            cascade,
            detector,
            out,
            images,
        } => {
            let cfg = load_config(config.as_deref())?;
            let cascade = required(cascade.as_ref(), cfg.face_cascade.as_ref(), "face cascade (--cascade)")?;
            cmd_detect(&DetectArgs {
                images,
                cascade: &cascade,
                params: detect_params(&cfg, detector),
                out: out.as_deref(),
            })
        }
        Command::Extract {
            config,
            cascade,
            mouth_cascade,
            detector,
            out,
            input_dir,
        } => {
            let cfg = load_config(config.as_deref())?;
            let face = required(cascade.as_ref(), cfg.face_cascade.as_ref(), "face cascade (--cascade)")?;
            let mouth = required(
                mouth_cascade.as_ref(),
                cfg.mouth_cascade.as_ref(),
                "mouth cascade (--mouth-cascade)",
            )?;
            cmd_extract(&ExtractArgs {
                input_dir,
                face_cascade: &face,
                mouth_cascade: &mouth,
                params: detect_params(&cfg, detector),
                out_dir: out,
            })
        }
        Command::Split {
            config,
            dataset,
            seed,
            out,
        } => {
            let cfg = with_overrides(RunConfig::load(config)?, *seed, None);
            cmd_split(&cfg, dataset.as_deref(), out.as_deref())
        }
        Command::Train {
            config,
            dataset,
            seed,
            positive_class,
            out,
        } => {
            let cfg = with_overrides(RunConfig::load(config)?, *seed, positive_class.as_ref());
            cmd_train(&cfg, dataset.as_deref(), out.as_deref()).map(|(s, _)| s)
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            split,
            seed,
            positive_class,
            out,
        } => {
            let cfg = with_overrides(RunConfig::load(config)?, *seed, positive_class.as_ref());
            let split = EvalSplit::parse(split)?;
            cmd_eval(&cfg, checkpoint, dataset.as_deref(), split, out.as_deref()).map(|(s, _)| s)
        }
        Command::Report { out, logs } => cmd_report(logs, out.as_deref()).map(|(s, _)| s),
    }
}
