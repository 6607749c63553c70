use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::embedding::Embedding;
use super::feature::FeatureMap;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Encoder, EncoderCache, Projector, ProjectorCache};
use crate::params::ParamMap;
use crate::tensor::Tensor;

/// Encoder trunk plus projector head; stateless apart from its layout.
///
/// Parameters are passed in explicitly so the same network serves the query
/// parameters and their momentum copy.
#[derive(Clone, Debug)]
pub struct EmbeddingNet {
    config: EncoderConfig,
    encoder: Encoder,
    projector: Projector,
}

/// Feature maps and their global-average-pooled vectors for a batch.
pub struct Encoded {
    pub maps: Vec<FeatureMap>,
    pub pooled: Vec<Vec<f64>>,
}

impl EmbeddingNet {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        let projector = Projector::new(&config.projector_dims)?;
        Ok(EmbeddingNet {
            config: config.clone(),
            encoder,
            projector,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Seeded initial parameters for encoder and projector.
    pub fn init(&self, seed: u64) -> ParamMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamMap::new();
        self.encoder.init(&mut params, &mut rng);
        self.projector.init(&mut params, &mut rng);
        params
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s || shape[0] == 0 {
            return Err(Error::Config(format!(
                "expected N x 3 x {s} x {s} images, got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Forward pass through the trunk, keeping the cache for backprop.
    pub fn encode_with_cache(
        &self,
        params: &ParamMap,
        images: &Tensor,
    ) -> Result<(Vec<FeatureMap>, EncoderCache)> {
        self.check_input(images)?;
        let (out, cache) = self.encoder.forward(params, images)?;
        Ok((FeatureMap::from_nchw(&out)?, cache))
    }

    /// Inference forward: feature maps (N x H x W x C) and their GAP vectors.
    pub fn encode(&self, params: &ParamMap, images: &Tensor) -> Result<Encoded> {
        let (maps, _) = self.encode_with_cache(params, images)?;
        let pooled = maps.iter().map(FeatureMap::global_average_pool).collect();
        Ok(Encoded { maps, pooled })
    }

    pub fn backward_encoder(
        &self,
        params: &ParamMap,
        cache: &EncoderCache,
        feature_grads: &[FeatureMap],
        grads: &mut ParamMap,
    ) -> Result<()> {
        let dy = FeatureMap::to_nchw(feature_grads)?;
        self.encoder.backward(params, cache, &dy, grads)
    }

    /// Projector forward on a row-major batch; returns raw (unnormalised) outputs.
    pub fn project_raw(
        &self,
        params: &ParamMap,
        pooled: &[f64],
        rows: usize,
    ) -> Result<(Vec<f64>, ProjectorCache)> {
        let (out, cache) = self.projector.forward(params, pooled, rows)?;
        ensure_finite(&out, "projector output")?;
        Ok((out, cache))
    }

    pub fn project(&self, params: &ParamMap, pooled: &[f64]) -> Result<Embedding> {
        if pooled.len() != self.projector.in_features() {
            return Err(Error::Config(format!(
                "projector expects {} inputs, got {}",
                self.projector.in_features(),
                pooled.len()
            )));
        }
        let (raw, _) = self.project_raw(params, pooled, 1)?;
        Embedding::normalize(&raw)
    }
}
