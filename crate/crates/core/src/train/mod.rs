//! Toy three-stage denoising harness: synthetic clips, degradation, forward
//! noising, a small conditioned denoiser and the stage schedule.

mod checkpoint;
mod data;
mod denoiser;
mod run;
mod sample;
mod schedule;

pub use checkpoint::{load_model, save_model, ModelMeta, META_FILE, WEIGHTS_FILE};
pub use data::{
    box_downsample, degrade, gaussian_blur, gaussian_kernel, make_pair, synth_video, upsample_nearest,
    DegradeParams, Motion, SynthConfig, SynthVideo, VideoPair,
};
pub use denoiser::{
    denoiser_backward, denoiser_forward_traced, denoising_loss, mse_with_grad, timestep_features, CondLabel,
    Conditioning, DenoiserTrace, DenoiserWeights, ModelDims, ToyModel,
};
pub use run::{head_tail_means, run_stage, LogRow, TrainConfig, TrainingLog};
pub use sample::{ddim_sample, sample_timesteps, sample_toy, DEFAULT_SAMPLE_STEPS};
pub use schedule::{add_noise, mix_ratio, NoiseSchedule, Stage, StageConfig, Trainable};
