//! Velocity fields `v(z, t, cond)` for rectified-flow integration.
//!
//! [`AnalyticField`] has closed-form trajectories and serves as the solver
//! oracle. [`DiT`](dit) is a seeded toy diffusion transformer whose
//! self-attention can be observed and enriched through an [`AttentionTap`].

mod analytic;
mod attention;
pub mod dit;
mod tap;

pub use analytic::AnalyticField;
pub use attention::{attention, enriched_attention, multi_head_attention};
pub use dit::{
    forward_velocity, init_weights, time_embedding, Conditioning, DiTConfig, DiTWeights,
    LatentVideo,
};
pub use tap::{AttentionTap, KvContext, LayerKV, TapMode};
