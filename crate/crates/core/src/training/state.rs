use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::Sgd;
use crate::error::Result;
use crate::model::{EmbeddingNet, EmbeddingQueue, MomentumPair};
use crate::params::ParamMap;
use crate::variants::{init_branch_params, AttentionBranch, VariantSpec};

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub net: EmbeddingNet,
    pub variant: VariantSpec,
    /// Encoder and projector, query and momentum key copies.
    pub pair: MomentumPair,
    /// Branch parameters (query side only).
    pub branch: ParamMap,
    pub queue: EmbeddingQueue,
    pub optimizer: Sgd,
    pub step: u64,
}

impl ModelState {
    /// Fresh state seeded from `config.seed`.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let net_cfg = config.network_config()?;
        let net = EmbeddingNet::new(&net_cfg)?;
        let variant = config.variant_spec()?;
        let query = net.init(config.seed);
        let mut branch = ParamMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6662_0000);
        init_branch_params(&variant, net_cfg.feature_channels, &mut branch, &mut rng)?;
        let queue = EmbeddingQueue::random(
            config.queue_size,
            net_cfg.embedding_dim(),
            config.seed ^ 0x7175_6575,
        )?;
        Ok(ModelState {
            net,
            variant,
            pair: MomentumPair::new(query, config.key_momentum)?,
            branch,
            queue,
            optimizer: Sgd::new(config.sgd_momentum, config.weight_decay),
            step: 0,
        })
    }

    pub fn attention_branch(&self) -> Result<Option<AttentionBranch>> {
        AttentionBranch::from_params(&self.variant, &self.branch)
    }

    /// Trainable scalar count (query encoder, projector, branch).
    pub fn num_trainable(&self) -> usize {
        self.pair.query.num_scalars() + self.branch.num_scalars()
    }
}
