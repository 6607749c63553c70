//! Query/key encoders, projector, negative queue and the contrastive objective.

pub mod config;
pub mod contrastive;
pub mod embedding;
pub mod feature;
pub mod momentum;
pub mod network;
pub mod queue;

pub use config::{Backbone, EncoderConfig};
pub use contrastive::{contrastive_loss, contrastive_loss_with_grad, ContrastiveOutput};
pub use embedding::{normalize_backward, Embedding};
pub use feature::{FeatureMap, GridMap};
pub use momentum::MomentumPair;
pub use network::{EmbeddingNet, Encoded};
pub use queue::EmbeddingQueue;
