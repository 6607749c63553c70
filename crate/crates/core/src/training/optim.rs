use crate::error::{Error, Result};
use crate::params::ParamMap;

/// SGD with heavy-ball momentum and L2 weight decay on every parameter.
///
/// `v <- mu * v + (g + wd * theta)`, `theta <- theta - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ParamMap,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: ParamMap::new(),
        }
    }

    pub fn with_velocity(momentum: f64, weight_decay: f64, velocity: ParamMap) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    /// Velocity buffers by parameter name; created lazily as zeros.
    pub fn velocity(&self) -> &ParamMap {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap, lr: f64) -> Result<()> {
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::State(format!("gradient shape mismatch for {name}")));
            }
            if !self.velocity.contains(name) {
                self.velocity
                    .insert(name.clone(), crate::tensor::Tensor::zeros(p.shape()));
            }
            let v = self.velocity.get_mut(name)?;
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}
