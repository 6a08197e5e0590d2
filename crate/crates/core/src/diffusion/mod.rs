//! Forward noising, the denoising objective, inpainting sampling and model variants.

mod model;
mod sample;
mod sampler;
mod schedule;
mod train;

pub use model::{
    build_variant, load_model, Backbone, BackboneKind, Denoiser, Model, ModelConfig, Variant, BACKGROUND_PREFIX,
    REFERENCE_PREFIX,
};
pub use sample::{apply_mask, select, CompositionSample, Pose, TrainingExample};
pub use sampler::{inpaint_sample, timestep_plan, EpsOracle};
pub use schedule::{add_noise, make_schedule, mix, timestep_embedding, NoiseSchedule};
pub use train::{draw_noise, moving_average, train, training_step, LossRecord, NoiseDraw, TrainConfig};
