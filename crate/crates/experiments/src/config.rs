//! Flat `key = value` experiment configuration.
//!
//! One setting per line, dotted keys, `#` starts a comment. Every key has a
//! default, so an empty file is a valid configuration. Environment variables
//! named `PF_` + the key uppercased with dots turned into underscores (for
//! example `PF_KERNEL_ALPHA`) override the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use pfml_core::field::ForceMode;
use pfml_core::kernel::{FieldParams, KernelKind, PotentialKernel};
use pfml_core::optim::{EncoderSpec, OptimMethod, OptimizerConfig, TrainConfig};
use pfml_core::synthdata::SyntheticSpec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
}

pub(crate) fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Axis swept by the ablation runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// Proxies per class.
    M,
    /// `delta_att`, with `delta_rep` moved along to keep the gap.
    Delta,
    Alpha,
    /// `delta_rep - delta_att`.
    DeltaGap,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" => Some(Self::M),
            "delta" => Some(Self::Delta),
            "alpha" => Some(Self::Alpha),
            "delta_gap" => Some(Self::DeltaGap),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::M => "M",
            Self::Delta => "delta",
            Self::Alpha => "alpha",
            Self::DeltaGap => "delta_gap",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Read the dataset from this CSV instead of generating it.
    pub data_path: Option<PathBuf>,
    pub data: SyntheticSpec,
    pub train_class_fraction: f64,
    pub kernel_kind: KernelKind,
    pub delta_att: f64,
    /// `None` means equal to `delta_att`.
    pub delta_rep: Option<f64>,
    pub alpha: f64,
    pub force_mode: ForceMode,
    pub proxies_per_class: usize,
    pub proxy_init_scale: Option<f64>,
    pub normalize_proxies: bool,
    pub encoder_out_dim: usize,
    pub normalize_embeddings: bool,
    pub adam: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub proxy_lr_multiplier: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub classes_per_batch: usize,
    pub ks: Vec<usize>,
    /// Evaluate retrieval every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub trace_stride: usize,
    pub noise_rate: f64,
    pub output_dir: PathBuf,
    pub bench_seeds: usize,
    pub bench_rates: Vec<f64>,
    pub ablate_axis: AblationAxis,
    pub ablate_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_path: None,
            data: SyntheticSpec::default(),
            train_class_fraction: 0.5,
            kernel_kind: KernelKind::Pfml,
            delta_att: 0.2,
            delta_rep: None,
            alpha: 4.0,
            force_mode: ForceMode::ForceSemantics,
            proxies_per_class: 15,
            proxy_init_scale: None,
            normalize_proxies: true,
            encoder_out_dim: 16,
            normalize_embeddings: true,
            adam: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate: 5e-3,
            proxy_lr_multiplier: 100.0,
            steps: 2000,
            batch_size: 64,
            classes_per_batch: 4,
            ks: vec![1, 2, 4, 8],
            eval_every: 0,
            trace_stride: 10,
            noise_rate: 0.0,
            output_dir: PathBuf::from("out"),
            bench_seeds: 5,
            bench_rates: vec![0.0, 0.2],
            ablate_axis: AblationAxis::M,
            ablate_values: vec![0.0, 15.0],
        }
    }
}

/// Every recognised key, in the order the README documents them.
pub const KEYS: &[&str] = &[
    "seed",
    "data.path",
    "data.num_classes",
    "data.modes_per_class",
    "data.dim",
    "data.samples_per_class",
    "data.mode_separation",
    "data.within_mode_std",
    "data.latent_dim",
    "data.train_class_fraction",
    "kernel.kind",
    "kernel.delta_att",
    "kernel.delta_rep",
    "kernel.alpha",
    "kernel.force_mode",
    "proxies.per_class",
    "proxies.init_scale",
    "proxies.normalize",
    "encoder.out_dim",
    "encoder.normalize",
    "optimizer.method",
    "optimizer.learning_rate",
    "optimizer.proxy_lr_multiplier",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.epsilon",
    "optimizer.steps",
    "optimizer.batch_size",
    "optimizer.classes_per_batch",
    "metrics.ks",
    "metrics.eval_every",
    "report.trace_stride",
    "noise.rate",
    "output.dir",
    "bench.seeds",
    "bench.rates",
    "ablate.axis",
    "ablate.values",
];

/// Environment variable that overrides `key`.
pub fn env_var_name(key: &str) -> String {
    format!("PF_{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Splits `text` into `(line number, key, value)` entries. Later lines win.
pub fn parse_lines(source_name: &str, text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| ConfigError::Parse {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(err(format!("missing value for `{key}`")));
        }
        out.insert(key.to_string(), (line, value.to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data.path" => self.data_path = Some(PathBuf::from(v)),
            "data.num_classes" => self.data.num_classes = parse_num(key, v)?,
            "data.modes_per_class" => self.data.modes_per_class = parse_num(key, v)?,
            "data.dim" => self.data.dim = parse_num(key, v)?,
            "data.samples_per_class" => self.data.samples_per_class = parse_num(key, v)?,
            "data.mode_separation" => self.data.mode_separation = parse_num(key, v)?,
            "data.within_mode_std" => self.data.within_mode_std = parse_num(key, v)?,
            "data.latent_dim" => {
                self.data.latent_dim = if v == "full" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "data.train_class_fraction" => self.train_class_fraction = parse_num(key, v)?,
            "kernel.kind" => {
                self.kernel_kind = match v {
                    "pfml" => KernelKind::Pfml,
                    "cpml" => KernelKind::Cpml,
                    _ => return Err(format!("`{key}` expects pfml or cpml, got `{v}`")),
                }
            }
            "kernel.delta_att" => self.delta_att = parse_num(key, v)?,
            "kernel.delta_rep" => self.delta_rep = Some(parse_num(key, v)?),
            "kernel.alpha" => self.alpha = parse_num(key, v)?,
            "kernel.force_mode" => {
                self.force_mode = match v {
                    "force_semantics" => ForceMode::ForceSemantics,
                    "full_gradient" => ForceMode::FullGradient,
                    _ => {
                        return Err(format!(
                            "`{key}` expects force_semantics or full_gradient, got `{v}`"
                        ))
                    }
                }
            }
            "proxies.per_class" => self.proxies_per_class = parse_num(key, v)?,
            "proxies.init_scale" => {
                self.proxy_init_scale = if v == "auto" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "proxies.normalize" => self.normalize_proxies = parse_bool(key, v)?,
            "encoder.out_dim" => self.encoder_out_dim = parse_num(key, v)?,
            "encoder.normalize" => self.normalize_embeddings = parse_bool(key, v)?,
            "optimizer.method" => {
                self.adam = match v {
                    "sgd" => false,
                    "adam" => true,
                    _ => return Err(format!("`{key}` expects sgd or adam, got `{v}`")),
                }
            }
            "optimizer.learning_rate" => self.learning_rate = parse_num(key, v)?,
            "optimizer.proxy_lr_multiplier" => self.proxy_lr_multiplier = parse_num(key, v)?,
            "optimizer.beta1" => self.beta1 = parse_num(key, v)?,
            "optimizer.beta2" => self.beta2 = parse_num(key, v)?,
            "optimizer.epsilon" => self.epsilon = parse_num(key, v)?,
            "optimizer.steps" => self.steps = parse_num(key, v)?,
            "optimizer.batch_size" => self.batch_size = parse_num(key, v)?,
            "optimizer.classes_per_batch" => self.classes_per_batch = parse_num(key, v)?,
            "metrics.ks" => self.ks = parse_list(key, v)?,
            "metrics.eval_every" => self.eval_every = parse_num(key, v)?,
            "report.trace_stride" => self.trace_stride = parse_num(key, v)?,
            "noise.rate" => self.noise_rate = parse_num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "bench.seeds" => self.bench_seeds = parse_num(key, v)?,
            "bench.rates" => self.bench_rates = parse_list(key, v)?,
            "ablate.axis" => {
                self.ablate_axis = AblationAxis::parse(v)
                    .ok_or_else(|| format!("`{key}` expects M, delta, alpha or delta_gap, got `{v}`"))?
            }
            "ablate.values" => self.ablate_values = parse_list(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses `text`, then applies overrides from `env` (looked up by
    /// [`env_var_name`]), then validates.
    pub fn load(
        source_name: &str,
        text: &str,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (key, (line, value)) in parse_lines(source_name, text)? {
            cfg.set(&key, &value).map_err(|msg| ConfigError::Parse {
                source_name: source_name.to_string(),
                line,
                msg,
            })?;
        }
        for key in KEYS {
            let var = env_var_name(key);
            if let Some(value) = env(&var) {
                cfg.set(key, value.trim())
                    .map_err(|msg| invalid(&var, msg))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn delta_rep(&self) -> f64 {
        self.delta_rep.unwrap_or(self.delta_att)
    }

    pub fn kernel(&self) -> Result<PotentialKernel, ConfigError> {
        let params = FieldParams::with_radii(self.delta_att, self.delta_rep(), self.alpha)
            .map_err(|e| invalid("kernel", e.to_string()))?;
        PotentialKernel::from_kind(self.kernel_kind, params).map_err(|e| invalid("kernel", e.to_string()))
    }

    pub fn optim_method(&self) -> OptimMethod {
        if self.adam {
            OptimMethod::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            }
        } else {
            OptimMethod::Sgd
        }
    }

    /// Training settings for one run seeded with `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            encoder: EncoderSpec::Linear {
                out_dim: self.encoder_out_dim,
            },
            normalize_embeddings: self.normalize_embeddings,
            proxies_per_class: self.proxies_per_class,
            proxy_init_scale: self.proxy_init_scale,
            normalize_proxies: self.normalize_proxies,
            optimizer: OptimizerConfig {
                method: self.optim_method(),
                learning_rate: self.learning_rate,
                proxy_lr_multiplier: self.proxy_lr_multiplier,
                steps: self.steps,
                batch_size: self.batch_size,
                classes_per_batch: self.classes_per_batch,
                seed,
            },
            mode: self.force_mode,
            trace_stride: self.trace_stride,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.data_path.is_none() {
            self.data
                .validate()
                .map_err(|e| invalid("data", e.to_string()))?;
        }
        if !(self.train_class_fraction > 0.0 && self.train_class_fraction < 1.0) {
            return Err(invalid(
                "data.train_class_fraction",
                format!("must lie in (0, 1), got {}", self.train_class_fraction),
            ));
        }
        self.kernel()?;
        self.train_config(self.seed)
            .validate()
            .map_err(|e| invalid("optimizer", e.to_string()))?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(invalid("metrics.ks", "needs at least one K, all positive"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(invalid(
                "noise.rate",
                format!("must lie in [0, 1), got {}", self.noise_rate),
            ));
        }
        if self.bench_seeds == 0 {
            return Err(invalid("bench.seeds", "must be positive"));
        }
        if let Some(r) = self.bench_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(invalid("bench.rates", format!("rates must lie in [0, 1), got {r}")));
        }
        Ok(())
    }
}
