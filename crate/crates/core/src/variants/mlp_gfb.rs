use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::params::ParamMap;
use crate::tensor::{dot, Tensor};

pub const MLP_W1: &str = "mlp_gfb.w1";
pub const MLP_B1: &str = "mlp_gfb.b1";
pub const MLP_W2: &str = "mlp_gfb.w2";
pub const MLP_B2: &str = "mlp_gfb.b2";

/// Per-location two-layer perceptron `phi -> w2 . relu(W1 phi + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBranch {
    hidden: usize,
    channels: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

pub struct MlpTrace {
    /// Post-ReLU hidden activations, `locations x hidden`.
    hidden: Vec<f64>,
}

impl MlpBranch {
    pub fn init_params<R: Rng + ?Sized>(
        params: &mut ParamMap,
        hidden: usize,
        channels: usize,
        rng: &mut R,
    ) {
        let b_in = 1.0 / (channels as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = uniform(hidden * channels, b_in);
        let b1 = uniform(hidden, b_in);
        let w2 = uniform(hidden, b_hid);
        let b2 = uniform(1, b_hid);
        params.insert(MLP_W1, Tensor::from_vec(&[hidden, channels], w1).unwrap());
        params.insert(MLP_B1, Tensor::from_vec(&[hidden], b1).unwrap());
        params.insert(MLP_W2, Tensor::from_vec(&[hidden], w2).unwrap());
        params.insert(MLP_B2, Tensor::from_vec(&[1], b2).unwrap());
    }

    pub fn from_params(params: &ParamMap) -> Result<Self> {
        let w1 = params.get(MLP_W1)?;
        if w1.shape().len() != 2 {
            return Err(Error::Config("mlp_gfb.w1 must be hidden x C".into()));
        }
        let (hidden, channels) = (w1.dim(0), w1.dim(1));
        let b1 = params.get(MLP_B1)?.data().to_vec();
        let w2 = params.get(MLP_W2)?.data().to_vec();
        let b2 = params.get(MLP_B2)?.data();
        if b1.len() != hidden || w2.len() != hidden || b2.len() != 1 {
            return Err(Error::Config("inconsistent MLP branch parameter shapes".into()));
        }
        Ok(MlpBranch {
            hidden,
            channels,
            w1: w1.data().to_vec(),
            b1,
            w2,
            b2: b2[0],
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<(GridMap, MlpTrace)> {
        if features.channels() != self.channels {
            return Err(Error::Config(format!(
                "MLP branch has C={} but feature map has {} channels",
                self.channels,
                features.channels()
            )));
        }
        let mut hidden = Vec::with_capacity(features.locations() * self.hidden);
        let mut values = Vec::with_capacity(features.locations());
        for cell in features.cells() {
            let start = hidden.len();
            for h in 0..self.hidden {
                let row = &self.w1[h * self.channels..(h + 1) * self.channels];
                hidden.push((dot(row, cell) + self.b1[h]).max(0.0));
            }
            values.push(dot(&hidden[start..], &self.w2) + self.b2);
        }
        Ok((
            GridMap::new(features.height(), features.width(), values)?,
            MlpTrace { hidden },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns d phi.
    pub fn backward(
        &self,
        features: &FeatureMap,
        trace: &MlpTrace,
        upstream: &[f64],
        grads: &mut ParamMap,
    ) -> Result<FeatureMap> {
        let c = self.channels;
        let mut dphi = FeatureMap::zeros(features.height(), features.width(), c);
        let mut dw1 = vec![0.0; self.hidden * c];
        let mut db1 = vec![0.0; self.hidden];
        let mut dw2 = vec![0.0; self.hidden];
        let mut db2 = 0.0;
        for (loc, u) in upstream.iter().enumerate() {
            let hid = &trace.hidden[loc * self.hidden..(loc + 1) * self.hidden];
            db2 += u;
            let phi = features.at(loc);
            for h in 0..self.hidden {
                dw2[h] += u * hid[h];
                if hid[h] <= 0.0 {
                    continue;
                }
                let dh = u * self.w2[h];
                db1[h] += dh;
                let row = &self.w1[h * c..(h + 1) * c];
                dw1[h * c..(h + 1) * c]
                    .iter_mut()
                    .zip(phi)
                    .for_each(|(d, p)| *d += dh * p);
                dphi.at_mut(loc)
                    .iter_mut()
                    .zip(row)
                    .for_each(|(d, w)| *d += dh * w);
            }
        }
        for (name, g) in [(MLP_W1, &dw1), (MLP_B1, &db1), (MLP_W2, &dw2)] {
            grads
                .get_mut(name)?
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .for_each(|(a, b)| *a += b);
        }
        grads.get_mut(MLP_B2)?.data_mut()[0] += db2;
        Ok(dphi)
    }
}
