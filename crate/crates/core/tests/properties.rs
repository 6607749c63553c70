//! Randomized properties of the map, loss, queue and momentum operations.

mod support;

use fitmask::evaluation::{retrieval_eval, FeatureMatrix, Similarity};
use fitmask::model::GridMap;
use fitmask::rationale::{kl_fitting_loss, softmax_normalize, total_loss, LossWeights};
use proptest::prelude::*;

#[test]
fn softmax_sums_to_one_on_1000_maps() {
    support::softmax_sums_to_one(1, 1000).unwrap();
}

#[test]
fn kl_is_nonnegative_and_zero_on_identical_inputs() {
    support::kl_is_nonnegative(2, 1000).unwrap();
}

#[test]
fn gradcam_is_relu_of_the_local_dot_product() {
    support::gradcam_is_nonnegative(3, 500).unwrap();
}

#[test]
fn adding_a_projection_never_lowers_the_max_out() {
    support::max_out_is_monotone(4, 500).unwrap();
}

#[test]
fn queue_is_a_bounded_fifo_over_10k_operations() {
    support::queue_matches_deque(5, 10_000).unwrap();
}

#[test]
fn momentum_update_is_a_convex_combination() {
    support::momentum_stays_between(6, 1000).unwrap();
}

#[test]
fn attention_normalize_is_literal_with_uniform_fallback() {
    support::attention_normalize_literal(7, 1000).unwrap();
}

#[test]
fn two_entry_softmax_by_hand() {
    let tau = 0.4;
    let m = GridMap::new(1, 2, vec![0.0, tau * 3f64.ln()]).unwrap();
    let p = softmax_normalize(&m, tau).unwrap();
    assert!((p.probabilities().values()[0] - 0.25).abs() < 1e-12);
    assert!((p.probabilities().values()[1] - 0.75).abs() < 1e-12);
}

#[test]
fn kl_by_hand() {
    // log-probabilities chosen so the softmax reproduces [0.5, 0.5] and [0.9, 0.1]
    let a = softmax_normalize(&GridMap::new(1, 2, vec![0.0, 0.0]).unwrap(), 1.0).unwrap();
    let g = softmax_normalize(&GridMap::new(1, 2, vec![0.9f64.ln(), 0.1f64.ln()]).unwrap(), 1.0).unwrap();
    let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    assert!((kl_fitting_loss(&a, &g).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.5108).abs() < 1e-4);
}

#[test]
fn total_loss_weights() {
    let w = LossWeights { contrastive: 1.0, fitting: 0.01 };
    assert!((total_loss(2.0, 0.5, w).unwrap() - 2.005).abs() < 1e-12);
    let plain = LossWeights { contrastive: 1.0, fitting: 0.0 };
    assert_eq!(total_loss(2.0, 0.5, plain).unwrap(), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_ignores_a_constant_shift(values in prop::collection::vec(-10.0f64..10.0, 1..50), shift in -50.0f64..50.0) {
        let n = values.len();
        let a = softmax_normalize(&GridMap::new(1, n, values.clone()).unwrap(), 0.4).unwrap();
        let b = softmax_normalize(&GridMap::new(1, n, values.iter().map(|v| v + shift).collect()).unwrap(), 0.4).unwrap();
        for (x, y) in a.probabilities().values().iter().zip(b.probabilities().values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn retrieval_is_invariant_to_positive_rescaling(seed in 0u64..1000, exp in -8i32..8) {
        // Powers of two keep cosine ties exact.
        let scale = 2f64.powi(exp);
        let (rows, labels) = support::random_retrieval_instance(seed, 30);
        let a = retrieval_eval(&FeatureMatrix::from_rows(rows.clone()).unwrap(), &labels, Similarity::Cosine).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let b = retrieval_eval(&FeatureMatrix::from_rows(scaled).unwrap(), &labels, Similarity::Cosine).unwrap();
        prop_assert_eq!(a.rank1_hits, b.rank1_hits);
        prop_assert!((a.map - b.map).abs() < 1e-9);
    }
}

#[test]
fn random_unit_embeddings_are_not_collapsed() {
    use fitmask::evaluation::collapse_check;
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (500, 64);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    // each coordinate of a random unit vector has std close to 1/sqrt(d)
    let first: Vec<f64> = rows.iter().map(|v| v[0]).collect();
    let m = first.iter().sum::<f64>() / n as f64;
    let std0 = (first.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((std0 - 1.0 / (d as f64).sqrt()).abs() < 0.03);
    let report = collapse_check(&FeatureMatrix::from_rows(rows).unwrap(), None).unwrap();
    assert!(!report.collapsed);
    assert!(report.mean_std > 10.0 * 0.01);
}
