//! Multi-view attention and attention-map alignment.
//!
//! [`mv_attention`] is the per-view weighted softmax fusion of value tokens;
//! [`MvAttentionBlock`] chains multi-head self-attention, AdaLIN and
//! multi-head cross-attention against the weighted view tokens. The
//! [`alignment`] submodule treats the additive blend of temporal and
//! multi-view attention maps as a gradient step on a quadratic energy.

pub mod alignment;
mod block;
mod matrix;

pub use alignment::{
    alignment_energy, alignment_gradient, alignment_step, build_joint_attention, default_eta, project_nonexpansive,
    spectral_norm_estimate, AttentionMap, DEFAULT_POWER_ITERS,
};
pub use block::{
    adalin, cross_attend, cross_attend_weighted, mv_attention, AdaLinParams, MultiHeadParams, MvAttention,
    MvAttentionBlock,
};
pub use matrix::Matrix;

/// A latent feature vector.
pub type FeatureToken = Vec<f64>;
