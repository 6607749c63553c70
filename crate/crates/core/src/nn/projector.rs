use rand::Rng;

use super::layers::Linear;
use crate::error::{Error, Result};
use crate::params::ParamMap;

/// MLP head mapping pooled features to the (unnormalised) embedding.
///
/// ReLU between layers, none after the last. Parameters live under `projector.`.
#[derive(Clone, Debug)]
pub struct Projector {
    layers: Vec<Linear>,
}

pub struct ProjectorCache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    rows: usize,
}

impl Projector {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "projector needs at least input and output widths, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("projector.{i}"), w[0], w[1]))
            .collect();
        Ok(Projector { layers })
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().map(|l| l.out_features).unwrap_or(0)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamMap, rng: &mut R) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(
        &self,
        params: &ParamMap,
        x: &[f64],
        rows: usize,
    ) -> Result<(Vec<f64>, ProjectorCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(params, &cur, rows)?;
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(cur);
            cur = y;
        }
        Ok((cur, ProjectorCache { inputs, rows }))
    }

    pub fn backward(
        &self,
        params: &ParamMap,
        cache: &ProjectorCache,
        dy: &[f64],
        grads: &mut ParamMap,
    ) -> Result<Vec<f64>> {
        let mut grad = dy.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            grad = l.backward(params, input, &grad, cache.rows, grads)?;
            if i > 0 {
                // input of layer i is relu output of layer i-1
                for (g, v) in grad.iter_mut().zip(input) {
                    if *v <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
        Ok(grad)
    }
}
