use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::params::ParamMap;
use crate::tensor::{dot, Tensor};

/// Parameter name of the fitting-branch projections (`K x C`).
pub const GFB_WEIGHT: &str = "gfb.weight";

/// K bias-free 1x1 projections combined by max-out over K.
#[derive(Clone, Debug, PartialEq)]
pub struct RationaleBranch {
    projections: usize,
    channels: usize,
    /// Row-major `K x C`.
    weights: Vec<f64>,
}

/// Argmax projection per location from a forward pass.
#[derive(Clone, Debug)]
pub struct BranchTrace {
    winners: Vec<usize>,
}

impl BranchTrace {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

impl RationaleBranch {
    pub fn new(projections: usize, channels: usize, weights: Vec<f64>) -> Result<Self> {
        if projections == 0 || channels == 0 {
            return Err(Error::Config("branch needs K >= 1 and C >= 1".into()));
        }
        if weights.len() != projections * channels {
            return Err(Error::Config(format!(
                "branch weights need {} values, got {}",
                projections * channels,
                weights.len()
            )));
        }
        Ok(RationaleBranch {
            projections,
            channels,
            weights,
        })
    }

    /// Uniform(-1/sqrt(C), 1/sqrt(C)) initialisation.
    pub fn random<R: Rng + ?Sized>(projections: usize, channels: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (channels as f64).sqrt();
        let weights = (0..projections * channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self::new(projections, channels, weights)
    }

    pub fn from_params(params: &ParamMap) -> Result<Self> {
        let t = params.get(GFB_WEIGHT)?;
        if t.shape().len() != 2 {
            return Err(Error::Config("gfb.weight must be K x C".into()));
        }
        Self::new(t.dim(0), t.dim(1), t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.projections, self.channels], self.weights.clone())
            .expect("branch shape is consistent")
    }

    pub fn projections(&self) -> usize {
        self.projections
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn projection(&self, k: usize) -> &[f64] {
        &self.weights[k * self.channels..(k + 1) * self.channels]
    }

    /// Branch with one extra projection appended.
    pub fn with_projection(&self, w: &[f64]) -> Result<Self> {
        if w.len() != self.channels {
            return Err(Error::Config("projection length must equal C".into()));
        }
        let mut weights = self.weights.clone();
        weights.extend_from_slice(w);
        Self::new(self.projections + 1, self.channels, weights)
    }

    fn check(&self, features: &FeatureMap) -> Result<()> {
        if features.channels() != self.channels {
            return Err(Error::Config(format!(
                "branch has C={} but feature map has {} channels",
                self.channels,
                features.channels()
            )));
        }
        Ok(())
    }

    /// `M[k][loc] = w_k . phi[loc]` for every projection.
    pub fn responses(&self, features: &FeatureMap) -> Result<Vec<Vec<f64>>> {
        self.check(features)?;
        Ok((0..self.projections)
            .map(|k| {
                let w = self.projection(k);
                features.cells().map(|cell| dot(w, cell)).collect()
            })
            .collect())
    }

    /// `A[i,j] = max_k w_k . phi[i,j]`.
    pub fn forward(&self, features: &FeatureMap) -> Result<(GridMap, BranchTrace)> {
        let all: Vec<usize> = (0..self.projections).collect();
        self.forward_subset(features, &all)
    }

    /// Max-out restricted to the projections in `subset` (0-based indices).
    pub fn forward_subset(
        &self,
        features: &FeatureMap,
        subset: &[usize],
    ) -> Result<(GridMap, BranchTrace)> {
        self.check(features)?;
        if subset.is_empty() {
            return Err(Error::Argument("projection subset is empty".into()));
        }
        if let Some(bad) = subset.iter().find(|k| **k >= self.projections) {
            return Err(Error::Argument(format!(
                "projection index {bad} out of range for K={}",
                self.projections
            )));
        }
        let mut values = Vec::with_capacity(features.locations());
        let mut winners = Vec::with_capacity(features.locations());
        for cell in features.cells() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = subset[0];
            for &k in subset {
                let s = dot(self.projection(k), cell);
                if s > best {
                    best = s;
                    arg = k;
                }
            }
            values.push(best);
            winners.push(arg);
        }
        Ok((
            GridMap::new(features.height(), features.width(), values)?,
            BranchTrace { winners },
        ))
    }

    /// Gradients `(dW as K x C, d phi)` from the upstream gradient on A.
    pub fn backward(
        &self,
        features: &FeatureMap,
        trace: &BranchTrace,
        upstream: &[f64],
    ) -> (Vec<f64>, FeatureMap) {
        let c = self.channels;
        let mut dw = vec![0.0; self.weights.len()];
        let mut dphi = FeatureMap::zeros(features.height(), features.width(), c);
        for (idx, (&k, &u)) in trace.winners.iter().zip(upstream).enumerate() {
            if u == 0.0 {
                continue;
            }
            let phi = features.at(idx);
            dw[k * c..(k + 1) * c]
                .iter_mut()
                .zip(phi)
                .for_each(|(d, p)| *d += u * p);
            dphi.at_mut(idx)
                .iter_mut()
                .zip(self.projection(k))
                .for_each(|(d, w)| *d = u * w);
        }
        (dw, dphi)
    }
}
