//! Patch-level momentum contrast between degraded and clean frames.

mod demo;
mod encoder;
mod loss;
mod queue;

pub use demo::{moco_demo, prime_queue, MocoDemoConfig};
pub use encoder::{
    contrastive_grads, contrastive_step, momentum_update, patch_features, patch_features_backward,
    ContrastiveConfig, ContrastiveGrads, EncoderPair, EncoderWeights, PatchTrace,
};
pub use loss::{infonce_backward, infonce_patch_loss, PatchFeatureGrid, Temperature};
pub use queue::{KeySource, MemoryQueue, QueueEntry, NORM_TOLERANCE};
