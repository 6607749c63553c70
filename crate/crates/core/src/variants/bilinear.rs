use crate::error::{Error, Result};
use crate::model::{FeatureMap, GridMap};
use crate::rationale::{softmax_normalize, RationaleBranch};
use crate::tensor::dot;

/// Per-part softmax maps kept for the backward pass.
pub struct BilinearTrace {
    parts: Vec<Vec<f64>>,
    tau: f64,
}

/// Concatenation of K part-pooled features `[f_1 .. f_K]`, length C*K.
///
/// `f_k = sum_ij softmax(w_k . phi / tau)[i,j] * phi[i,j]`.
pub fn bilinear_pool(
    features: &FeatureMap,
    branch: &RationaleBranch,
    tau: f64,
) -> Result<(Vec<f64>, BilinearTrace)> {
    let responses = branch.responses(features)?;
    let c = features.channels();
    let mut out = vec![0.0; c * branch.projections()];
    let mut parts = Vec::with_capacity(branch.projections());
    for (k, resp) in responses.into_iter().enumerate() {
        let map = GridMap::new(features.height(), features.width(), resp)?;
        let probs = softmax_normalize(&map, tau)?.probabilities().values().to_vec();
        let fk = &mut out[k * c..(k + 1) * c];
        for (cell, p) in features.cells().zip(&probs) {
            fk.iter_mut().zip(cell).for_each(|(o, v)| *o += p * v);
        }
        parts.push(probs);
    }
    Ok((out, BilinearTrace { parts, tau }))
}

/// Gradients `(dW as K x C, d phi)` of [`bilinear_pool`].
pub fn bilinear_pool_backward(
    features: &FeatureMap,
    branch: &RationaleBranch,
    trace: &BilinearTrace,
    upstream: &[f64],
) -> Result<(Vec<f64>, FeatureMap)> {
    let c = features.channels();
    let k_total = branch.projections();
    if upstream.len() != c * k_total || trace.parts.len() != k_total {
        return Err(Error::Argument("bilinear upstream gradient has wrong length".into()));
    }
    let mut dw = vec![0.0; k_total * c];
    let mut dphi = FeatureMap::zeros(features.height(), features.width(), c);
    for k in 0..k_total {
        let u = &upstream[k * c..(k + 1) * c];
        let p = &trace.parts[k];
        let dp: Vec<f64> = features.cells().map(|cell| dot(cell, u)).collect();
        let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
        let w = branch.projection(k);
        for (loc, (pl, dpl)) in p.iter().zip(&dp).enumerate() {
            let dm = pl * (dpl - mean) / trace.tau;
            let phi = features.at(loc);
            dw[k * c..(k + 1) * c]
                .iter_mut()
                .zip(phi)
                .for_each(|(d, v)| *d += dm * v);
            dphi.at_mut(loc)
                .iter_mut()
                .zip(u.iter().zip(w))
                .for_each(|(d, (ui, wi))| *d += pl * ui + dm * wi);
        }
    }
    Ok((dw, dphi))
}
