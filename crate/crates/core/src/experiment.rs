//! End-to-end runs on the synthetic dataset: train, extract, score.

use serde::{Deserialize, Serialize};

use crate::data::{render_synthetic, Image, SyntheticSpec};
use crate::error::Result;
use crate::evaluation::{
    collapse_check, mean_box_attention, extract_features, retrieval_eval, transform_box,
    uniform_share, CollapseReport, FrozenModel, RetrievalReport, Similarity,
};
use crate::training::{train, MetricRow, MetricsWriter, ModelState, TrainConfig, TrainSummary};

/// Rendered synthetic splits kept in memory.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub train_images: Vec<Image>,
    pub train_labels: Vec<usize>,
    pub test_images: Vec<Image>,
    pub test_labels: Vec<usize>,
    pub test_boxes: Vec<[usize; 4]>,
}

impl SyntheticData {
    pub fn render(spec: &SyntheticSpec) -> Result<Self> {
        let mut d = SyntheticData {
            spec: spec.clone(),
            train_images: Vec::new(),
            train_labels: Vec::new(),
            test_images: Vec::new(),
            test_labels: Vec::new(),
            test_boxes: Vec::new(),
        };
        for s in render_synthetic(spec)? {
            if s.train {
                d.train_images.push(s.image);
                d.train_labels.push(s.label);
            } else {
                d.test_images.push(s.image);
                d.test_labels.push(s.label);
                d.test_boxes.push(s.bbox);
            }
        }
        Ok(d)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: String,
    pub seed: u64,
    pub feature_dim: usize,
    pub retrieval: RetrievalReport,
    pub collapse: CollapseReport,
    /// Mean share of the attention mask inside the glyph box (test split).
    pub attention_mass: Option<f64>,
    pub uniform_share: f64,
    pub summary: TrainSummary,
}

/// Mean attention mass inside the ground-truth boxes of the test images.
pub fn mean_attention_mass(model: &FrozenModel, data: &SyntheticData) -> Result<Option<(f64, f64)>> {
    if model.branch.is_none() {
        return Ok(None);
    }
    let prepared: Vec<Image> = data.test_images.iter().map(|i| model.preprocess(i)).collect();
    let maps = model.feature_maps(&prepared)?;
    mean_box_attention(model, &maps, &data.test_boxes, data.spec.image_size).map(Some)
}

/// Trains `config` on the synthetic train split and scores the test split.
pub fn run_experiment(
    config: &TrainConfig,
    data: &SyntheticData,
    metrics: Option<&mut MetricsWriter>,
) -> Result<(ExperimentReport, ModelState, Vec<MetricRow>)> {
    let mut state = ModelState::init(config)?;
    let (rows, summary) = train(config, &mut state, &data.train_images, metrics, None)?;
    let model = FrozenModel::from_state(config, &state)?;
    let features = extract_features(&model, &data.test_images)?;
    let retrieval = retrieval_eval(&features, &data.test_labels, Similarity::Cosine)?;
    let collapse = collapse_check(&features, Some(&data.test_labels))?;
    let attention = mean_attention_mass(&model, data)?;
    let share = attention.map_or_else(
        || {
            let s = model.input_size();
            data.test_boxes
                .iter()
                .map(|b| uniform_share(transform_box(*b, data.spec.image_size, model.eval.resize, s), s))
                .sum::<f64>()
                / data.test_boxes.len().max(1) as f64
        },
        |(_, u)| u,
    );
    let report = ExperimentReport {
        variant: config.variant.mode.to_string(),
        seed: config.seed,
        feature_dim: features.dim,
        retrieval,
        collapse,
        attention_mass: attention.map(|(m, _)| m),
        uniform_share: share,
        summary,
    };
    Ok((report, state, rows))
}
