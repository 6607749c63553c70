use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{FeatureMap, GridMap};

/// Softmax temperature used for both GradCAM and attention maps by default.
pub const DEFAULT_MAP_TEMPERATURE: f64 = 0.4;

/// Floor applied to target probabilities before taking logs.
pub const KL_EPSILON: f64 = 1e-12;

/// Below this spread an attention map is treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;

/// Spatial softmax of a map at temperature `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    probabilities: GridMap,
    log_probabilities: Vec<f64>,
    temperature: f64,
}

impl NormalizedMap {
    pub fn probabilities(&self) -> &GridMap {
        &self.probabilities
    }

    pub fn log_probabilities(&self) -> &[f64] {
        &self.log_probabilities
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Flatten, divide by `tau`, softmax, reshape.
pub fn softmax_normalize(map: &GridMap, tau: f64) -> Result<NormalizedMap> {
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("softmax temperature {tau} must be > 0")));
    }
    ensure_finite(map.values(), "map to normalise")?;
    let scaled: Vec<f64> = map.values().iter().map(|v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let log_probabilities: Vec<f64> = scaled.iter().map(|s| s - lse).collect();
    let probs = log_probabilities.iter().map(|l| l.exp()).collect();
    Ok(NormalizedMap {
        probabilities: GridMap::new(map.height(), map.width(), probs)?,
        log_probabilities,
        temperature: tau,
    })
}

/// Which argument order the KL fitting loss uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `sum A log(A / G)`: attention distribution first.
    #[default]
    AttentionFirst,
    /// `sum G log(G / A)`: the argument order of torch's `kl_div(log A, G)`.
    GradcamFirst,
}

fn check_pair(attention: &NormalizedMap, target: &NormalizedMap) -> Result<()> {
    if !attention.probabilities.same_shape(&target.probabilities) {
        return Err(Error::Argument(format!(
            "attention grid {}x{} differs from GradCAM grid {}x{}",
            attention.probabilities.height(),
            attention.probabilities.width(),
            target.probabilities.height(),
            target.probabilities.width()
        )));
    }
    Ok(())
}

/// KL divergence between the normalised attention and the (constant) GradCAM target.
pub fn kl_fitting_loss(attention: &NormalizedMap, target: &NormalizedMap) -> Result<f64> {
    kl_fitting_loss_dir(attention, target, KlDirection::AttentionFirst)
}

pub fn kl_fitting_loss_dir(
    attention: &NormalizedMap,
    target: &NormalizedMap,
    direction: KlDirection,
) -> Result<f64> {
    check_pair(attention, target)?;
    let a = attention.probabilities.values();
    let la = &attention.log_probabilities;
    let g = target.probabilities.values();
    let value = match direction {
        KlDirection::AttentionFirst => a
            .iter()
            .zip(la)
            .zip(g)
            .filter(|((p, _), _)| **p > 0.0)
            .map(|((p, lp), q)| p * (lp - q.max(KL_EPSILON).ln()))
            .sum(),
        KlDirection::GradcamFirst => g
            .iter()
            .zip(la)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, lp)| q * (q.max(KL_EPSILON).ln() - lp))
            .sum(),
    };
    Ok(value)
}

/// Gradient of the KL loss w.r.t. the *raw* attention map (before softmax).
pub fn kl_fitting_grad_raw(
    attention: &NormalizedMap,
    target: &NormalizedMap,
    direction: KlDirection,
) -> Result<Vec<f64>> {
    check_pair(attention, target)?;
    let a = attention.probabilities.values();
    let g = target.probabilities.values();
    let tau = attention.temperature;
    Ok(match direction {
        KlDirection::AttentionFirst => {
            let r: Vec<f64> = attention
                .log_probabilities
                .iter()
                .zip(g)
                .map(|(lp, q)| lp - q.max(KL_EPSILON).ln())
                .collect();
            let mean: f64 = a.iter().zip(&r).map(|(p, ri)| p * ri).sum();
            a.iter()
                .zip(&r)
                .map(|(p, ri)| p * (ri - mean) / tau)
                .collect()
        }
        KlDirection::GradcamFirst => {
            let gsum: f64 = g.iter().sum();
            a.iter().zip(g).map(|(p, q)| (p * gsum - q) / tau).collect()
        }
    })
}

/// How raw attention is rescaled to pooling weights at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionScaling {
    /// `(A - min A) / (1e-7 + max A)`.
    #[default]
    Literal,
    /// `(A - min A) / (1e-7 + max A - min A)`, peak exactly ~1.
    Range,
}

/// Normalised attention weights A' with the uniform fallback for flat maps.
pub fn attention_normalize(raw: &GridMap) -> Result<GridMap> {
    attention_normalize_with(raw, AttentionScaling::Literal)
}

pub fn attention_normalize_with(raw: &GridMap, scaling: AttentionScaling) -> Result<GridMap> {
    ensure_finite(raw.values(), "attention map")?;
    let (min, max) = (raw.min(), raw.max());
    if max - min < DEGENERATE_SPREAD {
        return Ok(GridMap::filled(
            raw.height(),
            raw.width(),
            1.0 / raw.len() as f64,
        ));
    }
    let denom = match scaling {
        AttentionScaling::Literal => 1e-7 + max,
        AttentionScaling::Range => 1e-7 + max - min,
    };
    GridMap::new(
        raw.height(),
        raw.width(),
        raw.values().iter().map(|a| (a - min) / denom).collect(),
    )
}

/// Gradient of [`attention_normalize_with`] w.r.t. the raw map, routing the
/// min/max terms to their first arg-extremum. Zero in the flat fallback.
pub fn attention_normalize_backward(
    raw: &GridMap,
    scaling: AttentionScaling,
    upstream: &[f64],
) -> Vec<f64> {
    let v = raw.values();
    let (min, max) = (raw.min(), raw.max());
    let mut grad = vec![0.0; v.len()];
    if max - min < DEGENERATE_SPREAD {
        return grad;
    }
    let argmin = v.iter().position(|x| *x == min).unwrap_or(0);
    let argmax = v.iter().position(|x| *x == max).unwrap_or(0);
    let denom = match scaling {
        AttentionScaling::Literal => 1e-7 + max,
        AttentionScaling::Range => 1e-7 + max - min,
    };
    let total: f64 = upstream.iter().sum();
    let weighted: f64 = upstream.iter().zip(v).map(|(u, a)| u * (a - min)).sum();
    for (g, u) in grad.iter_mut().zip(upstream) {
        *g = u / denom;
    }
    grad[argmin] -= total / denom;
    let d_denom = -weighted / (denom * denom);
    grad[argmax] += d_denom;
    if scaling == AttentionScaling::Range {
        grad[argmin] -= d_denom;
    }
    grad
}

/// `f = sum_ij A'[i,j] * phi[i,j]` (a weighted sum, no renormalisation).
pub fn weighted_pool(features: &FeatureMap, weights: &GridMap) -> Result<Vec<f64>> {
    if !features.grid_matches(weights) {
        return Err(Error::Argument(format!(
            "weights {}x{} do not match feature grid {}x{}",
            weights.height(),
            weights.width(),
            features.height(),
            features.width()
        )));
    }
    let mut out = vec![0.0; features.channels()];
    for (cell, w) in features.cells().zip(weights.values()) {
        if *w != 0.0 {
            out.iter_mut().zip(cell).for_each(|(o, v)| *o += w * v);
        }
    }
    Ok(out)
}

/// Gradients of [`weighted_pool`]: `(d phi, d weights)`.
pub fn weighted_pool_backward(
    features: &FeatureMap,
    weights: &GridMap,
    upstream: &[f64],
) -> (FeatureMap, Vec<f64>) {
    let mut dphi = FeatureMap::zeros(features.height(), features.width(), features.channels());
    let mut dw = vec![0.0; weights.len()];
    for (idx, w) in weights.values().iter().enumerate() {
        dphi.at_mut(idx)
            .iter_mut()
            .zip(upstream)
            .for_each(|(d, u)| *d = w * u);
        dw[idx] = crate::tensor::dot(features.at(idx), upstream);
    }
    (dphi, dw)
}
