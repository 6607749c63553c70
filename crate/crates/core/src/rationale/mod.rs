//! GradCAM from the contrastive objective, the max-out fitting branch, the KL
//! fitting loss and inference-time attention pooling.

pub mod gfb;
pub mod gradcam;
pub mod loss;
pub mod maps;

pub use gfb::{BranchTrace, RationaleBranch, GFB_WEIGHT};
pub use gradcam::{gradcam, gradcam_of, GradCamMap, GradCamSource, LinearClassLogit, Objective};
pub use loss::{total_loss, LossWeights};
pub use maps::{
    attention_normalize, attention_normalize_backward, attention_normalize_with,
    kl_fitting_grad_raw, kl_fitting_loss, kl_fitting_loss_dir, softmax_normalize, weighted_pool,
    weighted_pool_backward, AttentionScaling, KlDirection, NormalizedMap,
    DEFAULT_MAP_TEMPERATURE, KL_EPSILON,
};
