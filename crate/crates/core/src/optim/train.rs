use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoder::{Encoder, EncoderParams, Forward};
use super::sampler::ClassBalancedSampler;
use crate::field::{ChargeEntity, ChargeSnapshot, EntityKind, Field, FieldError, ForceMode};
use crate::kernel::PotentialKernel;
use crate::seed::SeedTree;
use crate::synthdata::LabeledDataset;
use crate::vecmath::normalize_in_place;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite force at step {step}")]
    NonFiniteForce { step: u64 },
    #[error("empty batch at step {step}")]
    EmptyBatch { step: u64 },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimMethod {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimMethod {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: OptimMethod,
    pub learning_rate: f64,
    /// Proxies step with `learning_rate * proxy_lr_multiplier`.
    pub proxy_lr_multiplier: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub classes_per_batch: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimMethod::adam(),
            learning_rate: 5e-4,
            proxy_lr_multiplier: 100.0,
            steps: 1000,
            batch_size: 64,
            classes_per_batch: 4,
            seed: 0,
        }
    }
}

/// `num_classes x per_class` proxy vectors of dimension `dim`, slot `k` of
/// class `j` at row `j * per_class + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyTable {
    num_classes: usize,
    per_class: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ProxyTable {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_classes, self.per_class, self.dim)
    }

    pub fn len(&self) -> usize {
        self.num_classes * self.per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, class_id: usize, slot: usize) -> &[f64] {
        let row = class_id * self.per_class + slot;
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Rows in `(class, slot)` order, paired with their class.
    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.data
            .chunks_exact(self.dim.max(1))
            .take(self.len())
            .enumerate()
            .map(move |(i, row)| (i / self.per_class.max(1), row))
    }

    fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.dim..(row + 1) * self.dim]
    }
}

/// Draws every proxy coordinate from `N(0, scale^2)`, optionally projecting
/// each proxy onto the unit sphere.
pub fn init_proxies<R: Rng>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    scale: f64,
    normalize: bool,
    rng: &mut R,
) -> ProxyTable {
    let normal = Normal::new(0.0, scale).expect("finite proxy scale");
    let mut table = ProxyTable {
        num_classes,
        per_class,
        dim,
        data: (0..num_classes * per_class * dim)
            .map(|_| normal.sample(rng))
            .collect(),
    };
    if normalize {
        for row in 0..table.len() {
            normalize_in_place(table.row_mut(row));
        }
    }
    table
}

/// First and second moment estimates for Adam, one entry per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub encoder: Encoder,
    pub proxies: ProxyTable,
    /// Encoder moments: the free table row-major, or the linear weight
    /// followed by the bias.
    pub encoder_moments: Moments,
    pub proxy_moments: Moments,
    pub step_count: u64,
    /// Total energy of each step's snapshot, taken before its update.
    pub energy_trace: Vec<f64>,
    pub guard_hits: u64,
}

impl TrainState {
    pub fn new(encoder: Encoder, proxies: ProxyTable) -> Self {
        let n_enc = match &encoder.params {
            EncoderParams::FreeEmbeddings { table } => table.iter().map(Vec::len).sum(),
            EncoderParams::Linear { weight, bias, .. } => weight.len() + bias.len(),
        };
        let n_proxy = proxies.data.len();
        Self {
            encoder,
            proxies,
            encoder_moments: Moments::zeros(n_enc),
            proxy_moments: Moments::zeros(n_proxy),
            step_count: 0,
            energy_trace: Vec::new(),
            guard_hits: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub method: OptimMethod,
    pub learning_rate: f64,
    pub proxy_lr_multiplier: f64,
    pub mode: ForceMode,
    pub normalize_proxies: bool,
}

// Moves `params` along `force` (a negative gradient).
fn apply_update(
    method: OptimMethod,
    params: &mut [f64],
    force: &[f64],
    lr: f64,
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
) {
    match method {
        OptimMethod::Sgd => {
            for (p, f) in params.iter_mut().zip(force) {
                *p += lr * f;
            }
        }
        OptimMethod::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let t = t as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                let g = -force[i];
                first[i] = beta1 * first[i] + (1.0 - beta1) * g;
                second[i] = beta2 * second[i] + (1.0 - beta2) * g * g;
                let m_hat = first[i] / c1;
                let v_hat = second[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// One optimization step on `batch` (indices into `inputs`/`labels`).
///
/// Encodes the batch, assembles the snapshot of batch embeddings and every
/// proxy, computes forces, and moves the encoder and proxies. Returns the
/// snapshot's total energy before the update. On error the state is left
/// untouched.
pub fn train_step(
    state: &mut TrainState,
    inputs: &[Vec<f64>],
    labels: &[usize],
    batch: &[usize],
    kernel: &PotentialKernel,
    settings: &StepSettings,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch {
            step: state.step_count,
        });
    }
    let (num_classes, per_class, dim) = state.proxies.shape();
    let forwards: Vec<Forward> = batch
        .iter()
        .map(|&i| state.encoder.forward(i, &inputs[i]))
        .collect();

    let mut entities = Vec::with_capacity(batch.len() + state.proxies.len());
    for (slot, (&i, fwd)) in batch.iter().zip(&forwards).enumerate() {
        let label = labels[i];
        if label >= num_classes {
            return Err(TrainError::LabelOutOfRange { label, num_classes });
        }
        entities.push(ChargeEntity::new(slot, label, EntityKind::Sample, fwd.out.clone()));
    }
    for (row, (class_id, pos)) in state.proxies.rows().enumerate() {
        entities.push(ChargeEntity::new(
            batch.len() + row,
            class_id,
            EntityKind::Proxy,
            pos.to_vec(),
        ));
    }
    let snapshot = ChargeSnapshot::new(dim, num_classes, per_class, entities)?;
    let field = Field::new(&snapshot, kernel);
    let forces = field.batch_forces(settings.mode);
    let energy = field.total_energy();
    if !energy.is_finite() || forces.iter().flatten().any(|f| !f.is_finite()) {
        return Err(TrainError::NonFiniteForce {
            step: state.step_count,
        });
    }
    state.guard_hits += field.guard_hits();

    let t = state.step_count + 1;
    let (sample_forces, proxy_forces) = forces.split_at(batch.len());
    let normalize = state.encoder.normalize_output;
    let pulled: Vec<Vec<f64>> = forwards
        .iter()
        .zip(sample_forces)
        .map(|(fwd, f)| state.encoder.pullback(fwd, f))
        .collect();
    let lr = settings.learning_rate;
    match &mut state.encoder.params {
        EncoderParams::FreeEmbeddings { table } => {
            let width = table.first().map_or(0, Vec::len);
            for (&i, f) in batch.iter().zip(sample_forces) {
                let span = i * width..(i + 1) * width;
                apply_update(
                    settings.method,
                    &mut table[i],
                    f,
                    lr,
                    &mut state.encoder_moments.first[span.clone()],
                    &mut state.encoder_moments.second[span],
                    t,
                );
                if normalize {
                    normalize_in_place(&mut table[i]);
                }
            }
        }
        EncoderParams::Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        } => {
            let (in_dim, out_dim) = (*in_dim, *out_dim);
            let mut grad_w = vec![0.0; weight.len()];
            let mut grad_b = vec![0.0; bias.len()];
            for (&i, pulled) in batch.iter().zip(&pulled) {
                let x = &inputs[i];
                for o in 0..out_dim {
                    grad_b[o] += pulled[o];
                    let row = &mut grad_w[o * in_dim..(o + 1) * in_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += pulled[o] * xi;
                    }
                }
            }
            let nw = weight.len();
            let (wm1, bm1) = state.encoder_moments.first.split_at_mut(nw);
            let (wm2, bm2) = state.encoder_moments.second.split_at_mut(nw);
            apply_update(settings.method, weight, &grad_w, lr, wm1, wm2, t);
            apply_update(settings.method, bias, &grad_b, lr, bm1, bm2, t);
        }
    }

    let proxy_lr = lr * settings.proxy_lr_multiplier;
    for (row, f) in proxy_forces.iter().enumerate() {
        let span = row * dim..(row + 1) * dim;
        apply_update(
            settings.method,
            state.proxies.row_mut(row),
            f,
            proxy_lr,
            &mut state.proxy_moments.first[span.clone()],
            &mut state.proxy_moments.second[span],
            t,
        );
        if settings.normalize_proxies {
            normalize_in_place(state.proxies.row_mut(row));
        }
    }

    state.step_count = t;
    state.energy_trace.push(energy);
    Ok(energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    /// Free vectors initialized at the (normalized) inputs.
    Free,
    Linear { out_dim: usize },
}

/// Everything `train` needs besides the data and kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderSpec,
    pub normalize_embeddings: bool,
    pub proxies_per_class: usize,
    /// Standard deviation of proxy coordinates at init; `None` means `1/sqrt(D)`.
    pub proxy_init_scale: Option<f64>,
    pub normalize_proxies: bool,
    pub optimizer: OptimizerConfig,
    pub mode: ForceMode,
    /// Keep every `trace_stride`-th energy in the report.
    pub trace_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::Linear { out_dim: 16 },
            normalize_embeddings: true,
            proxies_per_class: 15,
            proxy_init_scale: None,
            normalize_proxies: true,
            optimizer: OptimizerConfig::default(),
            mode: ForceMode::ForceSemantics,
            trace_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", o.learning_rate));
        }
        if !(o.proxy_lr_multiplier.is_finite() && o.proxy_lr_multiplier > 0.0) {
            return bad(format!(
                "proxy_lr_multiplier must be positive, got {}",
                o.proxy_lr_multiplier
            ));
        }
        if o.batch_size == 0 || o.classes_per_batch == 0 {
            return bad("batch_size and classes_per_batch must be positive".into());
        }
        if let OptimMethod::Adam {
            beta1,
            beta2,
            epsilon,
        } = o.method
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
            }
        }
        if let EncoderSpec::Linear { out_dim: 0 } = self.encoder {
            return bad("encoder out_dim must be positive".into());
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be positive".into());
        }
        if let Some(s) = self.proxy_init_scale {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("proxy init scale must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub overflow_guard_hits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Energy of the last step's snapshot; `None` when no step ran.
    pub final_energy: Option<f64>,
    pub steps: usize,
    pub trace_stride: usize,
    pub energy_trace: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub wall_time_seconds: f64,
}

/// Builds the initial state for `dataset` under `config`.
pub fn initial_state(config: &TrainConfig, dataset: &LabeledDataset) -> TrainState {
    let tree = SeedTree::new(config.optimizer.seed);
    let encoder = match config.encoder {
        EncoderSpec::Free => Encoder::free(dataset.inputs.clone(), config.normalize_embeddings),
        EncoderSpec::Linear { out_dim } => Encoder::linear(
            dataset.dim(),
            out_dim,
            config.normalize_embeddings,
            &mut tree.stream("encoder", 0),
        ),
    };
    let dim = encoder.out_dim();
    let scale = config
        .proxy_init_scale
        .unwrap_or_else(|| 1.0 / (dim.max(1) as f64).sqrt());
    let proxies = init_proxies(
        dataset.num_classes,
        config.proxies_per_class,
        dim,
        scale,
        config.normalize_proxies,
        &mut tree.stream("proxies", 0),
    );
    TrainState::new(encoder, proxies)
}

/// Runs `config.optimizer.steps` class-balanced steps on `dataset`.
///
/// Deterministic given the optimizer seed: the encoder, proxies and batch
/// order each draw from their own substream.
pub fn train(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    kernel: &PotentialKernel,
) -> Result<(TrainState, TrainingReport), TrainError> {
    train_with(config, dataset, kernel, |_| {})
}

/// [`train`], calling `after_step` with the state after every step.
pub fn train_with<F: FnMut(&TrainState)>(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    kernel: &PotentialKernel,
    mut after_step: F,
) -> Result<(TrainState, TrainingReport), TrainError> {
    config.validate()?;
    if let Some(&label) = dataset.labels.iter().find(|&&l| l >= dataset.num_classes) {
        return Err(TrainError::LabelOutOfRange {
            label,
            num_classes: dataset.num_classes,
        });
    }
    let started = Instant::now();
    let mut state = initial_state(config, dataset);
    let o = &config.optimizer;
    let sampler = ClassBalancedSampler::new(
        &dataset.labels,
        dataset.num_classes,
        o.batch_size,
        o.classes_per_batch,
    );
    let mut batch_rng = SeedTree::new(o.seed).stream("batches", 0);
    let settings = StepSettings {
        method: o.method,
        learning_rate: o.learning_rate,
        proxy_lr_multiplier: o.proxy_lr_multiplier,
        mode: config.mode,
        normalize_proxies: config.normalize_proxies,
    };
    for _ in 0..o.steps {
        let batch = sampler.sample(&mut batch_rng);
        train_step(
            &mut state,
            &dataset.inputs,
            &dataset.labels,
            &batch,
            kernel,
            &settings,
        )?;
        after_step(&state);
    }
    let report = TrainingReport {
        final_energy: state.energy_trace.last().copied(),
        steps: state.step_count as usize,
        trace_stride: config.trace_stride,
        energy_trace: state
            .energy_trace
            .iter()
            .step_by(config.trace_stride)
            .copied()
            .collect(),
        diagnostics: Diagnostics {
            overflow_guard_hits: state.guard_hits,
        },
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((state, report))
}
