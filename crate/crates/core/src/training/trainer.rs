use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::make_views;
use super::config::TrainConfig;
use super::metrics::{MetricRow, MetricsWriter, TrainSummary};
use super::state::ModelState;
use super::step::{train_step, ObjectiveSettings};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sample order of `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(mix(seed, 0xE90C), epoch)));
    order
}

/// Augmentation stream of one image in one epoch.
pub fn view_rng(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed, 0x71E3), epoch), index as u64))
}

/// `(steps_per_epoch, total_steps)`; the ragged final batch is dropped.
/// `max_steps`, when set, replaces the epoch budget.
pub fn schedule(config: &TrainConfig, n: usize) -> Result<(u64, u64)> {
    let per_epoch = (n / config.batch_size) as u64;
    if per_epoch == 0 {
        return Err(Error::Data(format!(
            "{n} training images cannot fill one batch of {}",
            config.batch_size
        )));
    }
    let total = per_epoch * config.epochs as u64;
    Ok((per_epoch, config.max_steps.unwrap_or(total)))
}

/// Both augmented views of a batch as N x 3 x S x S tensors.
pub fn batch_views(
    config: &TrainConfig,
    images: &[Image],
    indices: &[usize],
    epoch: u64,
) -> Result<(Tensor, Tensor)> {
    let s = config.augmentation.output_size;
    let plane = 3 * s * s;
    let mut q = vec![0.0; indices.len() * plane];
    let mut k = vec![0.0; indices.len() * plane];
    for (row, &idx) in indices.iter().enumerate() {
        let mut rng = view_rng(config.seed, epoch, idx);
        let (a, b) = make_views(&images[idx], &config.augmentation, &mut rng);
        a.write_chw(&mut q[row * plane..(row + 1) * plane]);
        b.write_chw(&mut k[row * plane..(row + 1) * plane]);
    }
    let shape = [indices.len(), 3, s, s];
    Ok((Tensor::from_vec(&shape, q)?, Tensor::from_vec(&shape, k)?))
}

/// Called after every step with the state and the new metrics row.
pub type StepHook<'a> = dyn FnMut(&ModelState, &MetricRow) -> Result<()> + 'a;

/// Runs from `state.step` to the end of the schedule.
pub fn train(
    config: &TrainConfig,
    state: &mut ModelState,
    images: &[Image],
    mut metrics: Option<&mut MetricsWriter>,
    hook: Option<&mut StepHook<'_>>,
) -> Result<(Vec<MetricRow>, TrainSummary)> {
    let start = Instant::now();
    let settings = ObjectiveSettings::from_config(config);
    let (per_epoch, total) = schedule(config, images.len())?;
    let n = config.batch_size;
    let mut rows = Vec::new();
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    let mut hook = hook;
    while state.step < total {
        let step = state.step;
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(config.seed, epoch, images.len());
            order_epoch = epoch;
        }
        let b = (step % per_epoch) as usize;
        let indices = &order[b * n..(b + 1) * n];
        let (q, k) = batch_views(config, images, indices, epoch)?;
        let lr = config.lr_at(step, total);
        let loss = train_step(state, &settings, &q, &k, lr, indices)?;
        let row = MetricRow::new(step, loss, lr);
        if let Some(m) = metrics.as_deref_mut() {
            m.append(&row)?;
        }
        if let Some(h) = hook.as_deref_mut() {
            h(state, &row)?;
        }
        if step % 50 == 0 {
            log::info!(
                "step {step}/{total} L_CL={:.4} L_KL={:.4} total={:.4}",
                loss.contrastive,
                loss.fitting,
                loss.total
            );
        }
        rows.push(row);
    }
    if let Some(m) = metrics {
        m.flush()?;
    }
    let summary = TrainSummary::from_rows(&rows, start.elapsed().as_secs_f64());
    Ok((rows, summary))
}
