//! The ablation matrix: variant configuration, bilinear pooling and the MLP branch.

pub mod bilinear;
pub mod branch;
pub mod mlp_gfb;
pub mod pooling;
pub mod spec;

pub use bilinear::{bilinear_pool, bilinear_pool_backward, BilinearTrace};
pub use branch::{init_branch_params, AttentionBranch, AttentionTrace};
pub use mlp_gfb::MlpBranch;
pub use spec::{
    configure_variant, configure_variant_with, BranchKind, TestAggregation, TrainInteraction,
    VariantMode, VariantOverrides, VariantSpec, MLP_DEFAULT_HIDDEN,
};
pub use pooling::{pool, pool_backward, PoolTrace, Pooling};
