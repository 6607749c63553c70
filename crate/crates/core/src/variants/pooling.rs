use super::bilinear::{bilinear_pool, bilinear_pool_backward, BilinearTrace};
use super::branch::{AttentionBranch, AttentionTrace};
use super::spec::{TestAggregation, TrainInteraction};
use crate::error::{Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::params::ParamMap;
use crate::rationale::{
    attention_normalize_backward, attention_normalize_with, weighted_pool, weighted_pool_backward,
    AttentionScaling, GFB_WEIGHT,
};

/// How a feature map is reduced to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Gap,
    WeightedPool,
    BilinearPool,
}

impl From<TrainInteraction> for Pooling {
    fn from(t: TrainInteraction) -> Self {
        match t {
            TrainInteraction::None => Pooling::Gap,
            TrainInteraction::WeightedPool => Pooling::WeightedPool,
            TrainInteraction::BilinearPool => Pooling::BilinearPool,
        }
    }
}

impl From<TestAggregation> for Pooling {
    fn from(t: TestAggregation) -> Self {
        match t {
            TestAggregation::Gap => Pooling::Gap,
            TestAggregation::WeightedPool => Pooling::WeightedPool,
            TestAggregation::BilinearPool => Pooling::BilinearPool,
        }
    }
}

/// Per-image intermediate values needed by [`pool_backward`].
pub enum PoolTrace {
    Gap,
    Weighted {
        raw: GridMap,
        weights: GridMap,
        attention: AttentionTrace,
    },
    Bilinear(BilinearTrace),
}

fn need_branch(branch: Option<&AttentionBranch>) -> Result<&AttentionBranch> {
    branch.ok_or_else(|| Error::Config("pooling mode needs an attention branch".into()))
}

/// Pools one feature map. `tau` is the per-part temperature of bilinear pooling.
pub fn pool(
    features: &FeatureMap,
    mode: Pooling,
    branch: Option<&AttentionBranch>,
    scaling: AttentionScaling,
    tau: f64,
) -> Result<(Vec<f64>, PoolTrace)> {
    match mode {
        Pooling::Gap => Ok((features.global_average_pool(), PoolTrace::Gap)),
        Pooling::WeightedPool => {
            let (raw, attention) = need_branch(branch)?.forward(features)?;
            let weights = attention_normalize_with(&raw, scaling)?;
            let f = weighted_pool(features, &weights)?;
            Ok((
                f,
                PoolTrace::Weighted {
                    raw,
                    weights,
                    attention,
                },
            ))
        }
        Pooling::BilinearPool => {
            let b = need_branch(branch)?
                .as_max_out()
                .ok_or_else(|| Error::Config("bilinear pooling needs the max-out branch".into()))?;
            let (f, trace) = bilinear_pool(features, b, tau)?;
            Ok((f, PoolTrace::Bilinear(trace)))
        }
    }
}

/// Backward of [`pool`]: returns d phi and accumulates branch gradients.
pub fn pool_backward(
    features: &FeatureMap,
    trace: &PoolTrace,
    branch: Option<&AttentionBranch>,
    scaling: AttentionScaling,
    upstream: &[f64],
    branch_grads: &mut ParamMap,
) -> Result<FeatureMap> {
    match trace {
        PoolTrace::Gap => {
            let n = features.locations() as f64;
            let mut d = FeatureMap::zeros(features.height(), features.width(), features.channels());
            for idx in 0..features.locations() {
                d.at_mut(idx)
                    .iter_mut()
                    .zip(upstream)
                    .for_each(|(o, u)| *o = u / n);
            }
            Ok(d)
        }
        PoolTrace::Weighted {
            raw,
            weights,
            attention,
        } => {
            let (mut dphi, dweights) = weighted_pool_backward(features, weights, upstream);
            let draw = attention_normalize_backward(raw, scaling, &dweights);
            let via_branch = need_branch(branch)?.backward(features, attention, &draw, branch_grads)?;
            dphi.data_mut()
                .iter_mut()
                .zip(via_branch.data())
                .for_each(|(a, b)| *a += b);
            Ok(dphi)
        }
        PoolTrace::Bilinear(t) => {
            let b = need_branch(branch)?
                .as_max_out()
                .ok_or_else(|| Error::Config("bilinear pooling needs the max-out branch".into()))?;
            let (dw, dphi) = bilinear_pool_backward(features, b, t, upstream)?;
            branch_grads
                .get_mut(GFB_WEIGHT)?
                .data_mut()
                .iter_mut()
                .zip(&dw)
                .for_each(|(a, d)| *a += d);
            Ok(dphi)
        }
    }
}
