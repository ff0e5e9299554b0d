//! The 3D-Mamba block and its quadratic attention comparator.

mod attention;
mod block;

pub use attention::{attention_baseline, AttentionWeights, DEFAULT_MAX_TOKENS};
pub use block::{
    dwconv3d_backward, dwconv3d_forward, mamba3d_backward, mamba3d_forward, mamba3d_forward_traced, Branch,
    BranchWeights, Mamba3dConfig, Mamba3dGrads, Mamba3dTrace, MergeRule, ScanKind, WeightSharing,
};
