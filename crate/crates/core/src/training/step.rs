use serde::{Deserialize, Serialize};

use super::config::{TargetScaling, TrainConfig};
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::model::{
    contrastive_loss_with_grad, normalize_backward, Embedding, EmbeddingNet, EmbeddingQueue,
    FeatureMap, GridMap,
};
use crate::params::ParamMap;
use crate::rationale::{
    gradcam, kl_fitting_grad_raw, kl_fitting_loss_dir, softmax_normalize, total_loss,
    AttentionScaling, GradCamSource, KlDirection, LossWeights,
};
use crate::tensor::{l2_norm, Tensor};
use crate::variants::{pool, pool_backward, AttentionBranch, Pooling, PoolTrace, VariantSpec};

/// Training-time attention is normalised literally, as at test time.
const TRAIN_SCALING: AttentionScaling = AttentionScaling::Literal;

/// Loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub fitting: f64,
    pub total: f64,
}

/// Scalars of the objective that do not change between steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub temperature: f64,
    pub map_temperature: f64,
    pub weights: LossWeights,
    pub gradcam_source: GradCamSource,
    pub kl_direction: KlDirection,
    pub target_scaling: TargetScaling,
}

impl ObjectiveSettings {
    pub fn from_config(c: &TrainConfig) -> Self {
        ObjectiveSettings {
            temperature: c.temperature,
            map_temperature: c.map_temperature,
            weights: c.loss_weights,
            gradcam_source: c.gradcam_source,
            kl_direction: c.kl_direction,
            target_scaling: c.target_scaling,
        }
    }
}

/// Query-side loss, its parameter gradients, and the GradCAM maps used as targets.
pub struct ObjectiveOutput {
    pub loss: LossBreakdown,
    pub query_grads: ParamMap,
    pub branch_grads: ParamMap,
    /// One GradCAM map per image (empty when the variant fits nothing).
    pub gradcams: Vec<GridMap>,
    pub positive_logits: Vec<f64>,
}

/// Training pooling of the key view: GAP, except bilinear variants which pool
/// with the query's current (detached) branch so both sides share a space.
fn key_pooling(variant: &VariantSpec) -> Pooling {
    match Pooling::from(variant.train_interaction) {
        Pooling::BilinearPool => Pooling::BilinearPool,
        _ => Pooling::Gap,
    }
}

/// Key embeddings of the second view under the momentum parameters.
pub fn compute_keys(
    net: &EmbeddingNet,
    variant: &VariantSpec,
    key_params: &ParamMap,
    branch: Option<&AttentionBranch>,
    key_views: &Tensor,
    map_temperature: f64,
) -> Result<Vec<Embedding>> {
    let enc = net.encode(key_params, key_views)?;
    let mode = key_pooling(variant);
    let mut pooled = Vec::new();
    for phi in &enc.maps {
        let (f, _) = pool(phi, mode, branch, TRAIN_SCALING, map_temperature)?;
        pooled.extend(f);
    }
    let (raw, _) = net.project_raw(key_params, &pooled, enc.maps.len())?;
    let d = net.projector().out_features();
    raw.chunks(d).map(Embedding::normalize).collect()
}

struct QueryForward {
    maps: Vec<FeatureMap>,
    cache: crate::nn::EncoderCache,
    pool_traces: Vec<PoolTrace>,
    proj_cache: crate::nn::ProjectorCache,
    z: Vec<Embedding>,
    norms: Vec<f64>,
}

fn query_forward(
    net: &EmbeddingNet,
    variant: &VariantSpec,
    params: &ParamMap,
    branch: Option<&AttentionBranch>,
    views: &Tensor,
    map_temperature: f64,
) -> Result<QueryForward> {
    let (maps, cache) = net.encode_with_cache(params, views)?;
    let mode = Pooling::from(variant.train_interaction);
    let mut pooled = Vec::new();
    let mut pool_traces = Vec::with_capacity(maps.len());
    for phi in &maps {
        let (f, t) = pool(phi, mode, branch, TRAIN_SCALING, map_temperature)?;
        pooled.extend(f);
        pool_traces.push(t);
    }
    let (raw, proj_cache) = net.project_raw(params, &pooled, maps.len())?;
    let d = net.projector().out_features();
    let norms: Vec<f64> = raw.chunks(d).map(l2_norm).collect();
    let z = raw
        .chunks(d)
        .map(Embedding::normalize)
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryForward {
        maps,
        cache,
        pool_traces,
        proj_cache,
        z,
        norms,
    })
}

/// d phi for every image from per-row embedding gradients, accumulating
/// projector and branch parameter gradients into the given maps.
fn backprop_to_features(
    net: &EmbeddingNet,
    params: &ParamMap,
    branch: Option<&AttentionBranch>,
    fwd: &QueryForward,
    dz: &[Vec<f64>],
    query_grads: &mut ParamMap,
    branch_grads: &mut ParamMap,
) -> Result<Vec<FeatureMap>> {
    let draw: Vec<f64> = fwd
        .z
        .iter()
        .zip(&fwd.norms)
        .zip(dz)
        .flat_map(|((z, n), g)| normalize_backward(z.as_slice(), *n, g))
        .collect();
    let dpooled = net.projector().backward(params, &fwd.proj_cache, &draw, query_grads)?;
    let width = dpooled.len() / fwd.maps.len();
    fwd.maps
        .iter()
        .zip(&fwd.pool_traces)
        .zip(dpooled.chunks(width))
        .map(|((phi, t), u)| pool_backward(phi, t, branch, TRAIN_SCALING, u, branch_grads))
        .collect()
}

/// The full query-side objective against fixed keys and queue.
///
/// With `frozen_gradcams` the fitting targets are taken as given instead of
/// being recomputed; this lets finite differences see the same detached target.
#[allow(clippy::too_many_arguments)]
pub fn query_objective(
    net: &EmbeddingNet,
    variant: &VariantSpec,
    params: &ParamMap,
    branch_params: &ParamMap,
    views: &Tensor,
    keys: &[Embedding],
    queue: &EmbeddingQueue,
    settings: &ObjectiveSettings,
    frozen_gradcams: Option<&[GridMap]>,
) -> Result<ObjectiveOutput> {
    let branch = AttentionBranch::from_params(variant, branch_params)?;
    let branch = branch.as_ref();
    let fwd = query_forward(net, variant, params, branch, views, settings.map_temperature)?;
    let n = fwd.z.len();
    if keys.len() != n {
        return Err(Error::Argument(format!("{} keys for {n} queries", keys.len())));
    }

    let mut l_cl = 0.0;
    let mut dz_cl = Vec::with_capacity(n);
    let mut positive_logits = Vec::with_capacity(n);
    for (z, k) in fwd.z.iter().zip(keys) {
        let (out, dz) = contrastive_loss_with_grad(z, k, queue, settings.temperature)?;
        l_cl += out.loss / n as f64;
        positive_logits.push(out.positive_logit);
        dz_cl.push(dz);
    }

    let mut query_grads = params.zeros_like();
    let mut branch_grads = branch_params.zeros_like();
    let mut l_kl = 0.0;
    let mut dphi_kl: Option<Vec<FeatureMap>> = None;
    let mut gradcams = Vec::new();

    if variant.fits_gradcam {
        let branch = branch.ok_or_else(|| Error::Config("fitting variant without branch".into()))?;
        gradcams = match frozen_gradcams {
            Some(g) if g.len() == n => g.to_vec(),
            Some(g) => {
                return Err(Error::Argument(format!("{} frozen maps for {n} images", g.len())))
            }
            None => {
                let seed: Vec<Vec<f64>> = match settings.gradcam_source {
                    GradCamSource::PositiveLogit => keys.iter().map(|k| k.as_slice().to_vec()).collect(),
                    GradCamSource::FullLoss => dz_cl
                        .iter()
                        .map(|d| d.iter().map(|v| -v).collect())
                        .collect(),
                    GradCamSource::SupervisedCe => {
                        return Err(Error::Usage(
                            "supervised GradCAM needs labels; not available in self-supervised training".into(),
                        ))
                    }
                };
                let mut scratch_q = params.zeros_like();
                let mut scratch_b = branch_params.zeros_like();
                let g = backprop_to_features(
                    net,
                    params,
                    Some(branch),
                    &fwd,
                    &seed,
                    &mut scratch_q,
                    &mut scratch_b,
                )?;
                fwd.maps
                    .iter()
                    .zip(&g)
                    .map(|(phi, gphi)| gradcam(phi, gphi, settings.gradcam_source).map(|m| m.into_values()))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let scale = settings.weights.fitting / n as f64;
        let mut dphis = Vec::with_capacity(n);
        for (phi, g) in fwd.maps.iter().zip(&gradcams) {
            let (a, trace) = branch.forward(phi)?;
            let a_bar = softmax_normalize(&a, settings.map_temperature)?;
            let g_bar = softmax_normalize(&settings.target_scaling.apply(g), settings.map_temperature)?;
            l_kl += kl_fitting_loss_dir(&a_bar, &g_bar, settings.kl_direction)? / n as f64;
            let mut da = kl_fitting_grad_raw(&a_bar, &g_bar, settings.kl_direction)?;
            da.iter_mut().for_each(|v| *v *= scale);
            dphis.push(branch.backward(phi, &trace, &da, &mut branch_grads)?);
        }
        dphi_kl = Some(dphis);
    }

    let lambda = settings.weights.contrastive / n as f64;
    let dz: Vec<Vec<f64>> = dz_cl
        .iter()
        .map(|d| d.iter().map(|v| v * lambda).collect())
        .collect();
    let mut dphi = backprop_to_features(
        net,
        params,
        branch,
        &fwd,
        &dz,
        &mut query_grads,
        &mut branch_grads,
    )?;
    if let Some(extra) = dphi_kl {
        for (d, e) in dphi.iter_mut().zip(&extra) {
            d.data_mut().iter_mut().zip(e.data()).for_each(|(a, b)| *a += b);
        }
    }
    net.backward_encoder(params, &fwd.cache, &dphi, &mut query_grads)?;

    let total = total_loss(l_cl, l_kl, settings.weights)?;
    Ok(ObjectiveOutput {
        loss: LossBreakdown {
            contrastive: l_cl,
            fitting: l_kl,
            total,
        },
        query_grads,
        branch_grads,
        gradcams,
        positive_logits,
    })
}

/// One optimizer step. `batch_indices` only feed the diagnostic on failure.
pub fn train_step(
    state: &mut ModelState,
    settings: &ObjectiveSettings,
    query_views: &Tensor,
    key_views: &Tensor,
    lr: f64,
    batch_indices: &[usize],
) -> Result<LossBreakdown> {
    let n = query_views.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::Argument(format!("batch size {n} < 2")));
    }
    let branch = state.attention_branch()?;
    let keys = compute_keys(
        &state.net,
        &state.variant,
        &state.pair.key,
        branch.as_ref(),
        key_views,
        settings.map_temperature,
    )?;
    let out = query_objective(
        &state.net,
        &state.variant,
        &state.pair.query,
        &state.branch,
        query_views,
        &keys,
        &state.queue,
        settings,
        None,
    )
    .map_err(|e| diagnose(state.step, batch_indices, None, e))?;
    let l = out.loss;
    if !(l.contrastive.is_finite() && l.fitting.is_finite() && l.total.is_finite())
        || !out.query_grads.is_finite()
        || !out.branch_grads.is_finite()
    {
        return Err(diagnose(
            state.step,
            batch_indices,
            Some(l),
            Error::Numeric("non-finite loss or gradient".into()),
        ));
    }
    state.optimizer.step(&mut state.pair.query, &out.query_grads, lr)?;
    state.optimizer.step(&mut state.branch, &out.branch_grads, lr)?;
    state.pair.momentum_update()?;
    state.queue.push_batch(&keys)?;
    state.step += 1;
    Ok(l)
}

fn diagnose(step: u64, batch: &[usize], loss: Option<LossBreakdown>, err: Error) -> Error {
    match err {
        Error::Numeric(msg) => {
            let parts = loss.map_or("unavailable".to_string(), |l| {
                format!("L_CL={} L_KL={} total={}", l.contrastive, l.fitting, l.total)
            });
            Error::Numeric(format!(
                "{msg} at step {step}; loss components {parts}; batch indices {batch:?}"
            ))
        }
        other => other,
    }
}
