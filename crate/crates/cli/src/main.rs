//! `dialect-id`: batch front end for the dialect identification pipeline.

mod commands;
mod config;
mod error;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dialect_id::fusion::Normalization;

use crate::commands::{Split, SynthOptions, System};
use crate::config::{ExperimentConfig, Needs};
use crate::error::CliError;
use crate::run::Run;

#[derive(Parser, Debug)]
#[command(name = "dialect-id", version, about = "Spoken Arabic dialect identification toolkit")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where `predict` and `fuse` write their score matrix.
    #[arg(long, global = true)]
    scores_out: Option<PathBuf>,
    /// Artifact directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-dialect utterance, word, phone and frame counts.
    Stats {
        /// Manifest to summarize; defaults to the configured train and test manifests.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit vocabulary, scaling and optional SVD on the training split.
    BuildVsm,
    /// Train the configured text classifier.
    Train,
    /// Train the GMM universal background model on training frames.
    TrainUbm,
    /// Train the total-variability matrix.
    TrainTv,
    /// Extract i-vectors for the train and/or test split.
    ExtractIvectors {
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
    /// Fit the LDA/WCCN/length-norm backend on training i-vectors.
    FitBackend,
    /// Score a split with the text classifier or the i-vector backend.
    Predict {
        #[arg(long, value_enum, default_value = "text")]
        system: System,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Accuracy, macro precision/recall and confusion matrix of a score file.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Gold manifest; defaults to the configured test manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Weighted combination of normalized score matrices.
    Fuse {
        #[arg(long = "scores", required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        /// Comma-separated weights summing to 1; defaults to equal weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<Normalization>,
    },
    /// Write a seeded synthetic corpus and starter config.
    Synth {
        /// Two classes with disjoint vocabularies.
        #[arg(long)]
        disjoint: bool,
        /// Also generate acoustic frames.
        #[arg(long)]
        frames: bool,
        #[arg(long, default_value_t = 200)]
        train_per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
    },
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    match s {
        "zscore" => Ok(Normalization::Zscore),
        "minmax" => Ok(Normalization::Minmax),
        _ => Err(format!("unknown normalization {s:?} (expected zscore or minmax)")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats { .. } => "stats",
            Command::BuildVsm => "build-vsm",
            Command::Train => "train",
            Command::TrainUbm => "train-ubm",
            Command::TrainTv => "train-tv",
            Command::ExtractIvectors { .. } => "extract-ivectors",
            Command::FitBackend => "fit-backend",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Fuse { .. } => "fuse",
            Command::Synth { .. } => "synth",
        }
    }

    fn needs(&self) -> Needs {
        let pipeline = Needs {
            train: true,
            seed: true,
            out_dir: true,
            ..Needs::default()
        };
        match self {
            Command::Stats { .. } | Command::Evaluate { .. } | Command::Fuse { .. } => Needs::default(),
            Command::BuildVsm | Command::Train | Command::TrainUbm | Command::TrainTv => pipeline,
            Command::ExtractIvectors { split } => Needs {
                train: split != &Some(Split::Test),
                test: split != &Some(Split::Train),
                ..pipeline
            },
            Command::FitBackend => Needs {
                train: false,
                ..pipeline
            },
            Command::Predict { system, split } => Needs {
                train: *system == System::Text && *split == Split::Train,
                test: *system == System::Text && *split == Split::Test,
                ..pipeline
            },
            Command::Synth { .. } => Needs {
                seed: true,
                out_dir: true,
                ..Needs::default()
            },
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(CliError::internal)?;
    Ok(())
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::config)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out_dir.is_some() {
        cfg.out_dir = cli.out_dir.clone();
    }
    let problems = cfg.validate(cli.command.needs());
    if !problems.is_empty() {
        return Err(CliError::config(problems));
    }
    // commands without a pipeline directory fall back to their input's directory
    let out_dir = match (&cfg.out_dir, &cli.command) {
        (Some(d), _) => d.clone(),
        (None, Command::Stats { manifest: Some(m) }) => parent_of(m),
        (None, Command::Evaluate { scores, .. }) => parent_of(scores),
        (None, Command::Fuse { scores, .. }) => match &cli.scores_out {
            Some(p) => parent_of(p),
            None => parent_of(&scores[0]),
        },
        (None, _) => match &cli.config {
            Some(c) => parent_of(c),
            None => PathBuf::from("."),
        },
    };
    let name = cli.command.name();
    let mut run = Run::start(name, cfg.clone(), out_dir)?;
    let scores_out = cli.scores_out.as_deref();
    match cli.command {
        Command::Stats { manifest } => {
            let manifests: Vec<(String, PathBuf)> = match manifest {
                Some(m) => vec![("manifest".into(), m)],
                None => [("train", &cfg.train_manifest), ("test", &cfg.test_manifest)]
                    .into_iter()
                    .filter_map(|(n, p)| p.clone().map(|p| (n.to_string(), p)))
                    .collect(),
            };
            if manifests.is_empty() {
                return Err(CliError::usage("stats needs --manifest or manifests in the config"));
            }
            commands::stats(&manifests, cfg.frame_dir.as_deref(), &mut run)?;
        }
        Command::BuildVsm => commands::build_vsm(&cfg, &mut run)?,
        Command::Train => commands::train(&cfg, &mut run)?,
        Command::TrainUbm => commands::train_ubm_cmd(&cfg, &mut run)?,
        Command::TrainTv => commands::train_tv_cmd(&cfg, &mut run)?,
        Command::ExtractIvectors { split } => {
            let splits = match split {
                Some(s) => vec![s],
                None => vec![Split::Train, Split::Test],
            };
            commands::extract_ivectors_cmd(&cfg, &mut run, &splits)?;
        }
        Command::FitBackend => commands::fit_backend_cmd(&cfg, &mut run)?,
        Command::Predict { system, split } => commands::predict(&cfg, &mut run, system, split, scores_out)?,
        Command::Evaluate { scores, manifest } => {
            let gold = manifest
                .or_else(|| cfg.test_manifest.clone())
                .ok_or_else(|| CliError::usage("evaluate needs --manifest or test_manifest in the config"))?;
            commands::evaluate_scores(&scores, &gold, cfg.frame_dir.as_deref(), &mut run)?;
        }
        Command::Fuse {
            scores,
            weights,
            normalization,
        } => {
            let weights = weights.or_else(|| cfg.fusion.weights.clone());
            let method = normalization.unwrap_or(cfg.fusion.normalization);
            commands::fuse_scores(&scores, weights, method, scores_out, &mut run)?;
        }
        Command::Synth {
            disjoint,
            frames,
            train_per_class,
            test_per_class,
        } => {
            let opts = SynthOptions {
                disjoint,
                frames,
                train_per_class,
                test_per_class,
            };
            commands::synth_cmd(cfg.seed(), &opts, &mut run)?;
        }
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
