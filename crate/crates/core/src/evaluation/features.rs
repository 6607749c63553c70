use std::path::Path;

use super::Similarity;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::{EmbeddingNet, FeatureMap, GridMap};
use crate::params::ParamMap;
use crate::rationale::{attention_normalize_with, weighted_pool, AttentionScaling};
use crate::tensor::Tensor;
use crate::training::{load_checkpoint, EvalConfig, ModelState, TrainConfig};
use crate::variants::{bilinear_pool, pool, AttentionBranch, Pooling, TestAggregation, VariantSpec};

/// Eval-mode model: query encoder, projector and branch, frozen.
#[derive(Clone, Debug)]
pub struct FrozenModel {
    pub net: EmbeddingNet,
    pub variant: VariantSpec,
    pub params: ParamMap,
    pub branch: Option<AttentionBranch>,
    pub map_temperature: f64,
    pub eval: EvalConfig,
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument("feature rows have different lengths".into()));
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

impl FrozenModel {
    pub fn from_state(config: &TrainConfig, state: &ModelState) -> Result<Self> {
        Ok(FrozenModel {
            net: state.net.clone(),
            variant: state.variant,
            params: state.pair.query.clone(),
            branch: state.attention_branch()?,
            map_temperature: config.map_temperature,
            eval: config.eval.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, state) = load_checkpoint(path)?;
        Self::from_state(&config, &state)
    }

    pub fn input_size(&self) -> usize {
        self.net.config().input_size
    }

    /// Test-time preprocessing: resize then center crop to the input size.
    pub fn preprocess(&self, image: &Image) -> Image {
        let s = self.input_size();
        if image.width() == s && image.height() == s && self.eval.resize == s {
            return image.clone();
        }
        image.resize_center_crop(self.eval.resize, s)
    }

    /// Feature maps of already preprocessed images, in eval batches.
    pub fn feature_maps(&self, images: &[Image]) -> Result<Vec<FeatureMap>> {
        let s = self.input_size();
        let plane = 3 * s * s;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.eval.batch_size.max(1)) {
            let mut data = vec![0.0; chunk.len() * plane];
            for (i, img) in chunk.iter().enumerate() {
                if img.width() != s || img.height() != s {
                    return Err(Error::Config(format!(
                        "image is {}x{}, model expects {s}x{s}",
                        img.width(),
                        img.height()
                    )));
                }
                img.write_chw(&mut data[i * plane..(i + 1) * plane]);
            }
            let t = Tensor::from_vec(&[chunk.len(), 3, s, s], data)?;
            out.extend(self.net.encode(&self.params, &t)?.maps);
        }
        Ok(out)
    }

    pub fn aggregation(&self) -> Pooling {
        if self.eval.force_gap {
            Pooling::Gap
        } else {
            Pooling::from(self.variant.test_aggregation)
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.aggregation() {
            Pooling::BilinearPool => self.variant.feature_dim,
            _ => self.net.config().feature_channels,
        }
    }

    /// Downstream feature of one map per the variant's test aggregation.
    pub fn pool_map(&self, phi: &FeatureMap) -> Result<Vec<f64>> {
        let (f, _) = pool(
            phi,
            self.aggregation(),
            self.branch.as_ref(),
            self.eval.attention_scaling,
            self.map_temperature,
        )?;
        Ok(f)
    }

    /// Raw branch attention `A` of one map.
    pub fn raw_attention(&self, phi: &FeatureMap) -> Result<GridMap> {
        let b = self
            .branch
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no attention branch", self.variant.mode)))?;
        Ok(b.forward(phi)?.0)
    }

    /// Normalised attention `A'` used as the pooling mask.
    pub fn attention(&self, phi: &FeatureMap) -> Result<GridMap> {
        attention_normalize_with(&self.raw_attention(phi)?, self.eval.attention_scaling)
    }

    /// Features with the max-out restricted to `subset` (0-based projection indices).
    pub fn pool_map_subset(&self, phi: &FeatureMap, subset: &[usize]) -> Result<Vec<f64>> {
        let b = self
            .branch
            .as_ref()
            .and_then(AttentionBranch::as_max_out)
            .ok_or_else(|| Error::Config("subset inference needs the max-out branch".into()))?;
        match self.aggregation() {
            Pooling::WeightedPool => {
                let (raw, _) = b.forward_subset(phi, subset)?;
                let w = attention_normalize_with(&raw, self.eval.attention_scaling)?;
                weighted_pool(phi, &w)
            }
            Pooling::BilinearPool => {
                check_subset(subset, b.projections())?;
                let sub = crate::rationale::RationaleBranch::new(
                    subset.len(),
                    b.channels(),
                    subset.iter().flat_map(|&k| b.projection(k).to_vec()).collect(),
                )?;
                Ok(bilinear_pool(phi, &sub, self.map_temperature)?.0)
            }
            Pooling::Gap => Ok(phi.global_average_pool()),
        }
    }
}

fn check_subset(subset: &[usize], k: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Argument("projection subset is empty".into()));
    }
    if let Some(bad) = subset.iter().find(|&&i| i >= k) {
        return Err(Error::Argument(format!("projection index {bad} out of range for K={k}")));
    }
    Ok(())
}

/// Features of every image per the model's variant; images are preprocessed first.
pub fn extract_features(model: &FrozenModel, images: &[Image]) -> Result<FeatureMatrix> {
    if model.variant.test_aggregation != TestAggregation::Gap
        && !model.eval.force_gap
        && model.branch.is_none()
    {
        return Err(Error::Config(format!(
            "{} needs branch parameters for its test aggregation",
            model.variant.mode
        )));
    }
    let prepared: Vec<Image> = images.iter().map(|i| model.preprocess(i)).collect();
    let maps = model.feature_maps(&prepared)?;
    let rows = maps
        .iter()
        .map(|m| model.pool_map(m))
        .collect::<Result<Vec<_>>>()?;
    let fm = FeatureMatrix::from_rows(rows)?;
    if fm.rows > 0 && fm.dim != model.feature_dim() {
        return Err(Error::Config(format!(
            "features have dim {}, variant expects {}",
            fm.dim,
            model.feature_dim()
        )));
    }
    Ok(fm)
}

/// Unit projector embeddings of the training-time pooled features.
pub fn extract_embeddings(model: &FrozenModel, maps: &[FeatureMap]) -> Result<FeatureMatrix> {
    let mode = Pooling::from(model.variant.train_interaction);
    let rows = maps
        .iter()
        .map(|m| {
            let (f, _) = pool(
                m,
                mode,
                model.branch.as_ref(),
                AttentionScaling::Literal,
                model.map_temperature,
            )?;
            Ok(model.net.project(&model.params, &f)?.into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(rows)
}

pub(crate) fn similarity(metric: Similarity, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Similarity::Cosine => {
            let (na, nb) = (crate::tensor::l2_norm(a), crate::tensor::l2_norm(b));
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                crate::tensor::dot(a, b) / (na * nb)
            }
        }
        Similarity::L2 => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
    }
}
