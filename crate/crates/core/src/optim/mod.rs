//! Parameterized embeddings, proxies and the training loops that move them
//! along field forces.

mod descent;
mod encoder;
mod sampler;
mod train;

pub use descent::{
    backtracking_step, find_local_minimum, Descent, DescentOptions, DescentStatus, RelaxStep,
};
pub use encoder::{Encoder, EncoderParams};
pub use sampler::ClassBalancedSampler;
pub use train::{
    init_proxies, initial_state, train, train_step, train_with, Diagnostics, EncoderSpec, Moments,
    OptimMethod, OptimizerConfig, ProxyTable, StepSettings, TrainConfig, TrainError, TrainState,
    TrainingReport,
};
