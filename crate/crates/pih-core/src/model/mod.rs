//! The toy multimodal decoder: parameters, forward pass with capture,
//! greedy generation, and the planted-copy-head constructor.

mod forward;
mod params;
mod planted;

pub use forward::{forward, generate, next_token_distribution, AttentionCapture};
pub use params::{HeadWeights, LayerWeights, ModelDims, ModelError, ModelParams, WEIGHTS_MAGIC};
pub use planted::{build_planted_model, PlantedSpec};
