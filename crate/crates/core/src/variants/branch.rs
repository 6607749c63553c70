use rand::Rng;

use super::mlp_gfb::{MlpBranch, MlpTrace};
use super::spec::{BranchKind, VariantSpec};
use crate::error::{Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::params::ParamMap;
use crate::rationale::{BranchTrace, RationaleBranch, GFB_WEIGHT};

/// The attention-producing branch of a variant, rebuilt from parameters.
#[derive(Clone, Debug)]
pub enum AttentionBranch {
    MaxOut(RationaleBranch),
    Mlp(MlpBranch),
}

pub enum AttentionTrace {
    MaxOut(BranchTrace),
    Mlp(MlpTrace),
}

/// Adds freshly initialised branch parameters for `spec` to `params`.
pub fn init_branch_params<R: Rng + ?Sized>(
    spec: &VariantSpec,
    channels: usize,
    params: &mut ParamMap,
    rng: &mut R,
) -> Result<()> {
    match spec.branch {
        BranchKind::None => {}
        BranchKind::MaxOut => {
            let b = RationaleBranch::random(spec.projections, channels, rng)?;
            params.insert(GFB_WEIGHT, b.to_tensor());
        }
        BranchKind::Mlp { hidden } => MlpBranch::init_params(params, hidden, channels, rng),
    }
    Ok(())
}

impl AttentionBranch {
    pub fn from_params(spec: &VariantSpec, params: &ParamMap) -> Result<Option<Self>> {
        Ok(match spec.branch {
            BranchKind::None => None,
            BranchKind::MaxOut => Some(AttentionBranch::MaxOut(RationaleBranch::from_params(params)?)),
            BranchKind::Mlp { .. } => Some(AttentionBranch::Mlp(MlpBranch::from_params(params)?)),
        })
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<(GridMap, AttentionTrace)> {
        match self {
            AttentionBranch::MaxOut(b) => {
                let (a, t) = b.forward(features)?;
                Ok((a, AttentionTrace::MaxOut(t)))
            }
            AttentionBranch::Mlp(m) => {
                let (a, t) = m.forward(features)?;
                Ok((a, AttentionTrace::Mlp(t)))
            }
        }
    }

    /// Accumulates branch parameter gradients into `grads`; returns d phi.
    pub fn backward(
        &self,
        features: &FeatureMap,
        trace: &AttentionTrace,
        upstream: &[f64],
        grads: &mut ParamMap,
    ) -> Result<FeatureMap> {
        match (self, trace) {
            (AttentionBranch::MaxOut(b), AttentionTrace::MaxOut(t)) => {
                let (dw, dphi) = b.backward(features, t, upstream);
                grads
                    .get_mut(GFB_WEIGHT)?
                    .data_mut()
                    .iter_mut()
                    .zip(&dw)
                    .for_each(|(a, d)| *a += d);
                Ok(dphi)
            }
            (AttentionBranch::Mlp(m), AttentionTrace::Mlp(t)) => m.backward(features, t, upstream, grads),
            _ => Err(Error::State("attention trace does not match branch".into())),
        }
    }

    pub fn as_max_out(&self) -> Option<&RationaleBranch> {
        match self {
            AttentionBranch::MaxOut(b) => Some(b),
            AttentionBranch::Mlp(_) => None,
        }
    }
}
