//! Dataset ingestion and the synthetic glyph-on-texture generator.

pub mod image;
pub mod manifest;
pub mod synthetic;

pub use self::image::Image;
pub use manifest::{
    load_image_folder, DatasetManifest, LabeledImages, ManifestEntry, SkipReport, Split, SplitRule,
};
pub use synthetic::{
    class_glyph, class_name, generate_synthetic, glyph_family, read_boxes, render_synthetic,
    Glyph, GlyphStyle, SyntheticSample, SyntheticSpec, GLYPH_OFF, GLYPH_VALUE,
};
