//! One train-and-evaluate run: data, zero-shot split, label noise, training,
//! retrieval on the held-out classes.
//!
//! Every random draw of a run comes from its seed `s` through named
//! substreams: `("data", 0)` generates the mixture, `("noise", 0)` corrupts
//! the training labels and `("train", 0)` seeds the encoder, proxies and
//! batches. Runs that differ only in kernel or hyperparameters therefore see
//! the same data and initialization.

use std::fs::File;
use std::io::BufReader;

use pfml_core::metrics::{recall_at_k, MetricsError, RetrievalResult};
use pfml_core::optim::{train_with, TrainError, TrainState, TrainingReport};
use pfml_core::seed::SeedTree;
use pfml_core::synthdata::{gen_mixture, inject_label_noise, split_zero_shot, DataError, LabeledDataset};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Metrics(#[from] MetricsError),
    /// Malformed input file; line 0 means the file as a whole.
    #[error("{path}:{line}: {msg}")]
    Input { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for bad configuration or input files, 3 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input { .. } => 2,
            _ => 3,
        }
    }

    pub fn input(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Self::Input {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Checkpoint {
    pub step: u64,
    pub recall: RetrievalResult,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub state: TrainState,
    pub report: TrainingReport,
    pub retrieval: RetrievalResult,
    /// Retrieval every `eval_every` steps, when enabled.
    pub history: Vec<Checkpoint>,
}

/// The full dataset of a run: the configured CSV, or the synthetic mixture
/// drawn from the run's `("data", 0)` substream.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<LabeledDataset, RunError> {
    match &cfg.data_path {
        Some(path) => {
            let file = File::open(path).map_err(|e| RunError::io(path, e))?;
            Ok(LabeledDataset::read_csv(BufReader::new(file))?)
        }
        None => {
            let mut spec = cfg.data.clone();
            spec.seed = SeedTree::new(seed).child_seed("data", 0);
            Ok(gen_mixture(&spec)?)
        }
    }
}

/// Train/test split of a run, with `noise_rate` of the training labels
/// corrupted.
pub fn prepare_splits(
    cfg: &ExperimentConfig,
    seed: u64,
    noise_rate: f64,
) -> Result<(LabeledDataset, LabeledDataset), RunError> {
    let full = load_dataset(cfg, seed)?;
    let (train, test) = split_zero_shot(&full, cfg.train_class_fraction)?;
    let train = inject_label_noise(&train, noise_rate, SeedTree::new(seed).child_seed("noise", 0))?;
    Ok((train, test))
}

fn evaluate(cfg: &ExperimentConfig, state: &TrainState, test: &LabeledDataset) -> Result<RetrievalResult, MetricsError> {
    let embeddings = state.encoder.encode_all(&test.inputs);
    let ks: Vec<usize> = cfg.ks.iter().copied().filter(|&k| k < test.len()).collect();
    recall_at_k(&embeddings, &test.labels, &ks)
}

/// Trains on the noisy training split and measures retrieval on the
/// held-out classes.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome, RunError> {
    let (train, test) = prepare_splits(cfg, seed, cfg.noise_rate)?;
    let kernel = cfg.kernel()?;
    let train_cfg = cfg.train_config(SeedTree::new(seed).child_seed("train", 0));
    let mut history = Vec::new();
    let mut eval_error = None;
    let (state, report) = train_with(&train_cfg, &train, &kernel, |state| {
        if cfg.eval_every > 0 && state.step_count % cfg.eval_every as u64 == 0 && eval_error.is_none() {
            match evaluate(cfg, state, &test) {
                Ok(recall) => history.push(Checkpoint {
                    step: state.step_count,
                    recall,
                }),
                Err(e) => eval_error = Some(e),
            }
        }
    })?;
    if let Some(e) = eval_error {
        return Err(e.into());
    }
    let retrieval = evaluate(cfg, &state, &test)?;
    Ok(RunOutcome {
        train,
        test,
        state,
        report,
        retrieval,
        history,
    })
}
