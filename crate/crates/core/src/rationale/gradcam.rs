use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::tensor::dot;

/// Which scalar the GradCAM gradient was taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradCamSource {
    /// Raw positive-pair similarity `z . z_pos`.
    #[default]
    PositiveLogit,
    /// The negated per-sample contrastive loss (so larger = supports the positive).
    FullLoss,
    /// A class logit of a supervised classifier.
    SupervisedCe,
}

/// Non-negative H x W attribution map. Detached: it is a plain value, never
/// part of a gradient path.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCamMap {
    values: GridMap,
    source: GradCamSource,
}

impl GradCamMap {
    pub fn values(&self) -> &GridMap {
        &self.values
    }

    pub fn source(&self) -> GradCamSource {
        self.source
    }

    pub fn into_values(self) -> GridMap {
        self.values
    }
}

/// A scalar that can report its gradient w.r.t. a feature map.
pub trait Objective {
    fn value_and_feature_grad(&self, features: &FeatureMap) -> Result<(f64, FeatureMap)>;
}

/// `G[i,j] = ReLU(g[i,j] . phi[i,j])` from a precomputed feature gradient.
pub fn gradcam(
    features: &FeatureMap,
    feature_grad: &FeatureMap,
    source: GradCamSource,
) -> Result<GradCamMap> {
    if !features.same_shape(feature_grad) {
        return Err(Error::Argument("gradient and feature map shapes differ".into()));
    }
    ensure_finite(feature_grad.data(), "GradCAM gradient")?;
    let values = features
        .cells()
        .zip(feature_grad.cells())
        .map(|(phi, g)| dot(phi, g).max(0.0))
        .collect();
    Ok(GradCamMap {
        values: GridMap::new(features.height(), features.width(), values)?,
        source,
    })
}

/// GradCAM of an arbitrary differentiable objective.
pub fn gradcam_of<O: Objective + ?Sized>(
    features: &FeatureMap,
    objective: &O,
    source: GradCamSource,
) -> Result<GradCamMap> {
    let (_, grad) = objective.value_and_feature_grad(features)?;
    gradcam(features, &grad, source)
}

/// Class logit of a linear classifier on globally pooled features.
pub struct LinearClassLogit<'a> {
    /// `classes x C`, row-major.
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub class: usize,
}

impl Objective for LinearClassLogit<'_> {
    fn value_and_feature_grad(&self, features: &FeatureMap) -> Result<(f64, FeatureMap)> {
        let c = features.channels();
        let classes = self.bias.len();
        if self.weight.len() != classes * c || self.class >= classes {
            return Err(Error::Usage("classifier shape does not match features".into()));
        }
        let row = &self.weight[self.class * c..(self.class + 1) * c];
        let value = dot(row, &features.global_average_pool()) + self.bias[self.class];
        let n = features.locations() as f64;
        let mut grad = FeatureMap::zeros(features.height(), features.width(), c);
        for idx in 0..features.locations() {
            grad.at_mut(idx)
                .iter_mut()
                .zip(row)
                .for_each(|(g, w)| *g = w / n);
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negative_contributions() {
        let fm = FeatureMap::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        let g = FeatureMap::new(1, 2, 1, vec![-3.0, 2.0]).unwrap();
        let cam = gradcam(&fm, &g, GradCamSource::PositiveLogit).unwrap();
        assert_eq!(cam.values().values(), &[0.0, 2.0]);
    }

    struct Scaled(f64);
    impl Objective for Scaled {
        fn value_and_feature_grad(&self, f: &FeatureMap) -> Result<(f64, FeatureMap)> {
            // objective = c * sum_ij (u . phi_ij)^2 / 2 with a fixed direction u
            let u: Vec<f64> = (0..f.channels()).map(|i| (i as f64 - 0.5).sin()).collect();
            let mut grad = FeatureMap::zeros(f.height(), f.width(), f.channels());
            let mut v = 0.0;
            for idx in 0..f.locations() {
                let s = dot(&u, f.at(idx));
                v += 0.5 * self.0 * s * s;
                grad.at_mut(idx)
                    .iter_mut()
                    .zip(&u)
                    .for_each(|(g, ui)| *g = self.0 * s * ui);
            }
            Ok((v, grad))
        }
    }

    #[test]
    fn scaling_objective_scales_map() {
        let fm = FeatureMap::new(2, 2, 3, (0..12).map(|v| (v as f64 * 0.7).cos()).collect())
            .unwrap();
        let base = gradcam_of(&fm, &Scaled(1.0), GradCamSource::FullLoss).unwrap();
        let scaled = gradcam_of(&fm, &Scaled(2.5), GradCamSource::FullLoss).unwrap();
        for (a, b) in base.values().values().iter().zip(scaled.values().values()) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn supervised_logit_objective() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let weight = [2.0, -1.0, 0.0, 1.0];
        let bias = [0.0, 0.0];
        let obj = LinearClassLogit {
            weight: &weight,
            bias: &bias,
            class: 0,
        };
        let cam = gradcam_of(&fm, &obj, GradCamSource::SupervisedCe).unwrap();
        // g = w/2 at each cell: cell0 -> 1.0, cell1 -> -0.5 clamped
        assert_eq!(cam.values().values(), &[1.0, 0.0]);
        let bad = LinearClassLogit {
            weight: &weight,
            bias: &bias,
            class: 5,
        };
        assert!(matches!(
            gradcam_of(&fm, &bad, GradCamSource::SupervisedCe),
            Err(Error::Usage(_))
        ));
    }
}
