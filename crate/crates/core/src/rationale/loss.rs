use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the contrastive (lambda) and KL fitting (nu) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub contrastive: f64,
    pub fitting: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            contrastive: 1.0,
            fitting: 0.01,
        }
    }
}

impl LossWeights {
    pub fn new(contrastive: f64, fitting: f64) -> Result<Self> {
        let w = LossWeights {
            contrastive,
            fitting,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.contrastive) || !ok(self.fitting) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if self.contrastive == 0.0 && self.fitting == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

/// `lambda * L_CL + nu * L_KL`.
pub fn total_loss(contrastive: f64, fitting: f64, weights: LossWeights) -> Result<f64> {
    if !contrastive.is_finite() || !fitting.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss components: L_CL={contrastive}, L_KL={fitting}"
        )));
    }
    Ok(weights.contrastive * contrastive + weights.fitting * fitting)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_combine() {
        let t = total_loss(2.0, 0.5, LossWeights::default()).unwrap();
        assert!((t - 2.005).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights() {
        assert_eq!(total_loss(2.0, 0.5, LossWeights::new(1.0, 0.0).unwrap()).unwrap(), 2.0);
        assert_eq!(total_loss(2.0, 0.5, LossWeights::new(0.0, 1.0).unwrap()).unwrap(), 0.5);
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(matches!(
            total_loss(f64::NAN, 0.0, LossWeights::default()),
            Err(Error::Numeric(_))
        ));
    }
}
