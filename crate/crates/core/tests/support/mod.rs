//! Oracles shared by the integration test targets. Everything here is written
//! from the definitions, without calling the library routine it checks.

#![allow(dead_code)]

use std::collections::VecDeque;

use fitmask::model::{Backbone, Embedding, EmbeddingQueue, EncoderConfig, FeatureMap, GridMap, MomentumPair};
use fitmask::params::ParamMap;
use fitmask::rationale::{
    attention_normalize, gradcam, kl_fitting_loss, softmax_normalize, GradCamSource, RationaleBranch,
};
use fitmask::tensor::Tensor;
use fitmask::training::{compute_keys, query_objective, ModelState, ObjectiveSettings, TrainConfig};
use fitmask::variants::VariantMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map<R: Rng>(rng: &mut R, h: usize, w: usize, scale: f64) -> GridMap {
    GridMap::new(h, w, (0..h * w).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_features<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- properties

pub fn softmax_sums_to_one(seed: u64, maps: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..maps {
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let m = random_map(&mut r, h, w, 20.0);
        let tau = r.gen_range(0.05..2.0);
        let s: f64 = softmax_normalize(&m, tau).unwrap().probabilities().values().iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(format!("map {n}: softmax sums to {s}"));
        }
    }
    Ok(())
}

pub fn kl_is_nonnegative(seed: u64, pairs: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..pairs {
        let (h, w) = (r.gen_range(1..8), r.gen_range(1..8));
        let a = softmax_normalize(&random_map(&mut r, h, w, 5.0), 0.4).unwrap();
        let g = softmax_normalize(&random_map(&mut r, h, w, 5.0), 0.4).unwrap();
        let kl = kl_fitting_loss(&a, &g).unwrap();
        if kl < -1e-9 {
            return Err(format!("pair {n}: KL {kl}"));
        }
        let same = kl_fitting_loss(&a, &a).unwrap();
        if same.abs() > 1e-12 {
            return Err(format!("pair {n}: KL of identical inputs {same}"));
        }
    }
    Ok(())
}

pub fn gradcam_is_nonnegative(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..cases {
        let (h, w, c) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..9));
        let phi = random_features(&mut r, h, w, c);
        let g = random_features(&mut r, h, w, c);
        let cam = gradcam(&phi, &g, GradCamSource::PositiveLogit).unwrap();
        for (idx, v) in cam.values().values().iter().enumerate() {
            let expected = phi.at(idx).iter().zip(g.at(idx)).map(|(a, b)| a * b).sum::<f64>().max(0.0);
            if *v < 0.0 || (v - expected).abs() > 1e-12 {
                return Err(format!("case {n} cell {idx}: {v} vs ReLU(g.phi) {expected}"));
            }
        }
    }
    Ok(())
}

pub fn max_out_is_monotone(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..cases {
        let (k, c) = (r.gen_range(1..6), r.gen_range(1..8));
        let phi = random_features(&mut r, 3, 4, c);
        let b = RationaleBranch::new(k, c, (0..k * c).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let extra: Vec<f64> = (0..c).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bigger = b.with_projection(&extra).unwrap();
        let (a0, _) = b.forward(&phi).unwrap();
        let (a1, _) = bigger.forward(&phi).unwrap();
        for (i, (x, y)) in a0.values().iter().zip(a1.values()).enumerate() {
            let direct = extra.iter().zip(phi.at(i)).map(|(w, f)| w * f).sum::<f64>();
            if y < x || *y != x.max(direct) {
                return Err(format!("case {n} cell {i}: {x} -> {y} after adding a projection"));
            }
        }
    }
    Ok(())
}

fn key(v: u64) -> Embedding {
    let raw = [1.0, (v % 1000) as f64 / 100.0, (v / 1000) as f64];
    Embedding::normalize(&raw).unwrap()
}

/// Random pushes against a `VecDeque` reference that drops from the front.
pub fn queue_matches_deque(seed: u64, ops: usize) -> Check {
    let mut r = rng(seed);
    let capacity = 37;
    let mut q = EmbeddingQueue::new(capacity, 3).unwrap();
    let mut model: VecDeque<Embedding> = VecDeque::new();
    let mut counter = 0u64;
    for op in 0..ops {
        let batch = r.gen_range(0..=8);
        let keys: Vec<Embedding> = (0..batch)
            .map(|_| {
                counter += 1;
                key(counter)
            })
            .collect();
        q.push_batch(&keys).unwrap();
        for k in keys {
            if model.len() == capacity {
                model.pop_front();
            }
            model.push_back(k);
        }
        if q.len() != model.len() || !q.iter().eq(model.iter()) {
            return Err(format!("op {op}: queue contents diverge from the reference"));
        }
    }
    Ok(())
}

pub fn momentum_stays_between(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..cases {
        let m = if n % 10 == 0 { [0.0, 1.0][n / 10 % 2] } else { r.gen_range(0.0..1.0) };
        let len = r.gen_range(1..20);
        let qv: Vec<f64> = (0..len).map(|_| r.gen_range(-5.0..5.0)).collect();
        let kv: Vec<f64> = (0..len).map(|_| r.gen_range(-5.0..5.0)).collect();
        let mut query = ParamMap::new();
        query.insert("w", Tensor::from_vec(&[len], qv.clone()).unwrap());
        let mut keyp = ParamMap::new();
        keyp.insert("w", Tensor::from_vec(&[len], kv.clone()).unwrap());
        let mut pair = MomentumPair::from_parts(query, keyp, m).unwrap();
        pair.momentum_update().unwrap();
        let out = pair.key.get("w").unwrap().data();
        for i in 0..len {
            let (lo, hi) = (kv[i].min(qv[i]), kv[i].max(qv[i]));
            let target = m * kv[i] + (1.0 - m) * qv[i];
            if out[i] < lo || out[i] > hi || (out[i] - target).abs() > 1e-12 {
                return Err(format!("case {n}: m={m} k={} q={} -> {}", kv[i], qv[i], out[i]));
            }
        }
    }
    Ok(())
}

pub fn attention_normalize_literal(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    for n in 0..cases {
        let (h, w) = (r.gen_range(1..8), r.gen_range(1..8));
        let m = random_map(&mut r, h, w, 3.0);
        let out = attention_normalize(&m).unwrap();
        let v = m.values();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (o, x) in out.values().iter().zip(v) {
            let expected = if max - min < 1e-12 { 1.0 / v.len() as f64 } else { (x - min) / (1e-7 + max) };
            if (o - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(format!("case {n}: {o} vs {expected}"));
            }
        }
        let c = r.gen_range(-4.0..4.0);
        let flat = attention_normalize(&GridMap::filled(h, w, c)).unwrap();
        if flat.values().iter().any(|x| (x - 1.0 / (h * w) as f64).abs() > 1e-15) {
            return Err(format!("case {n}: constant map did not fall back to uniform"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------ retrieval oracle

/// Leave-one-out cosine retrieval, written with plain loops.
/// Returns `(rank1_hits, rank5_hits, map_percent, queries)`.
pub fn brute_force_retrieval(rows: &[Vec<f64>], labels: &[usize]) -> (usize, usize, f64, usize) {
    let n = rows.len();
    let cos = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na.sqrt() * nb.sqrt())
        }
    };
    let (mut r1, mut r5, mut ap_sum, mut queries) = (0, 0, 0.0, 0);
    for q in 0..n {
        let mut relevant_total = 0;
        for g in 0..n {
            if g != q && labels[g] == labels[q] {
                relevant_total += 1;
            }
        }
        if relevant_total == 0 {
            continue;
        }
        queries += 1;
        // selection sort by descending similarity, ties by index
        let mut gallery: Vec<usize> = Vec::new();
        for g in 0..n {
            if g != q {
                gallery.push(g);
            }
        }
        for i in 0..gallery.len() {
            let mut best = i;
            for j in i + 1..gallery.len() {
                let (sb, sj) = (cos(&rows[q], &rows[gallery[best]]), cos(&rows[q], &rows[gallery[j]]));
                if sj > sb || (sj == sb && gallery[j] < gallery[best]) {
                    best = j;
                }
            }
            gallery.swap(i, best);
        }
        if labels[gallery[0]] == labels[q] {
            r1 += 1;
        }
        let mut hit5 = false;
        for g in gallery.iter().take(5) {
            if labels[*g] == labels[q] {
                hit5 = true;
            }
        }
        if hit5 {
            r5 += 1;
        }
        let mut hits = 0;
        let mut precision_sum = 0.0;
        for (rank, g) in gallery.iter().enumerate() {
            if labels[*g] == labels[q] {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / relevant_total as f64;
    }
    (r1, r5, 100.0 * ap_sum / queries.max(1) as f64, queries)
}

pub fn random_retrieval_instance(seed: u64, items: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let classes = r.gen_range(2..8);
    let dim = r.gen_range(2..12);
    let labels: Vec<usize> = (0..items).map(|i| if i < classes * 2 { i % classes } else { r.gen_range(0..classes) }).collect();
    let rows = (0..items)
        .map(|_| {
            (0..dim)
                // coarse values make exact similarity ties common
                .map(|_| r.gen_range(-3i32..=3) as f64)
                .collect()
        })
        .collect();
    (rows, labels)
}

// ---------------------------------------------------------- gradient oracle

pub fn tiny_config(mode: VariantMode, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.encoder = EncoderConfig {
        backbone: Backbone::TinyConv {
            stage_channels: vec![4, 8],
            stage_strides: Vec::new(),
        },
        input_size: 16,
        feature_channels: 8,
        feature_grid: (4, 4),
        projector_dims: vec![8, 16, 8],
    };
    c.augmentation = fitmask::training::AugmentationPolicy::identity(16);
    c.eval.resize = 16;
    c.variant.mode = mode;
    c.variant.projections = 4;
    c.batch_size = 4;
    c.queue_size = 8;
    c.seed = seed;
    c
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub struct GradientCheck {
    pub worst: f64,
    pub parameters: usize,
}

/// Central differences (h = 1e-5) over every query and branch scalar of the
/// tiny model, GradCAM targets held at their base values.
pub fn gradient_check(mode: VariantMode, seed: u64) -> GradientCheck {
    let cfg = tiny_config(mode, seed);
    let state = ModelState::init(&cfg).unwrap();
    let settings = ObjectiveSettings::from_config(&cfg);
    let mut r = rng(seed + 100);
    let x = Tensor::randn(&[4, 3, 16, 16], 1.0, &mut r);
    let xk = Tensor::randn(&[4, 3, 16, 16], 1.0, &mut r);
    let queue = EmbeddingQueue::random(8, 8, seed + 7).unwrap();
    let branch = state.attention_branch().unwrap();
    let keys = compute_keys(&state.net, &state.variant, &state.pair.key, branch.as_ref(), &xk, 0.4).unwrap();
    let base = query_objective(
        &state.net, &state.variant, &state.pair.query, &state.branch, &x, &keys, &queue, &settings, None,
    )
    .unwrap();
    let frozen = base.gradcams.clone();
    let loss = |q: &ParamMap, b: &ParamMap| {
        query_objective(&state.net, &state.variant, q, b, &x, &keys, &queue, &settings, Some(&frozen))
            .unwrap()
            .loss
            .total
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut parameters = 0;
    for on_branch in [false, true] {
        let src = if on_branch { &state.branch } else { &state.pair.query };
        let grads = if on_branch { &base.branch_grads } else { &base.query_grads };
        for name in src.names().cloned().collect::<Vec<_>>() {
            let len = src.get(&name).unwrap().numel();
            parameters += len;
            for i in 0..len {
                let mut plus = src.clone();
                plus.get_mut(&name).unwrap().data_mut()[i] += h;
                let mut minus = src.clone();
                minus.get_mut(&name).unwrap().data_mut()[i] -= h;
                let (lp, lm) = if on_branch {
                    (loss(&state.pair.query, &plus), loss(&state.pair.query, &minus))
                } else {
                    (loss(&plus, &state.branch), loss(&minus, &state.branch))
                };
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.get(&name).unwrap().data()[i];
                worst = worst.max(rel_err(fd, an));
            }
        }
    }
    GradientCheck { worst, parameters }
}
