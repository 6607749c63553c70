//! Linear probing, retrieval, projection-variance analysis, collapse
//! detection, attention localization and heatmap export.

pub mod collapse;
pub mod features;
pub mod heatmap;
pub mod localization;
pub mod probe;
pub mod projections;
pub mod retrieval;

pub use collapse::{collapse_check, CollapseReport};
pub use features::{extract_embeddings, extract_features, FeatureMatrix, FrozenModel};
pub use heatmap::{export_heatmaps, jet, minmax_scale, overlay};
pub use localization::{attention_mass_in_box, mean_box_attention, transform_box, uniform_share};
pub use probe::{
    linear_probe, probe_report, stratified_subset, LinearClassifier, ProbeReport, ProbeRow,
    L2_GRID, PROBE_FRACTIONS,
};
pub use projections::{projection_variance, ProjectionVarianceReport, HIGH_VARIANCE_TOP};
pub use retrieval::{average_precision, ranked_gallery, retrieval_eval, RetrievalReport, Similarity};
