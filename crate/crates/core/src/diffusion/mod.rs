//! Micro diffusion model: schedule, architecture, training, sampling.

mod model;
mod sample;
mod schedule;
mod train;

pub use model::{is_conditional_trainable, MicroDiffusion, ModelConfig, RefFeats};
pub use sample::{ddim_sample, ddim_trajectory, refine_render, Condition};
pub use schedule::{
    DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_SAMPLER_STEPS, DEFAULT_T,
};
pub use train::{probe_loss, train, LogRecord, Phase, TrainConfig, TrainSample};
