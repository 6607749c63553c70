//! Linear probe behaviour on frozen features of the synthetic dataset.

use fitmask::data::SyntheticSpec;
use fitmask::evaluation::{extract_features, linear_probe, FrozenModel};
use fitmask::experiment::SyntheticData;
use fitmask::training::{ModelState, TrainConfig};
use fitmask::variants::VariantMode;

#[test]
fn more_labels_do_not_hurt_on_average() {
    let data = SyntheticData::render(&SyntheticSpec::default()).unwrap();
    let (mut full, mut fifth) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let mut c = TrainConfig::desk();
        c.variant.mode = VariantMode::MocoBaseline;
        c.seed = seed;
        let model = FrozenModel::from_state(&c, &ModelState::init(&c).unwrap()).unwrap();
        let train = extract_features(&model, &data.train_images).unwrap();
        let test = extract_features(&model, &data.test_images).unwrap();
        let probe = |f| linear_probe(&train, &data.train_labels, &test, &data.test_labels, f, seed).unwrap();
        let (a, b) = (probe(1.0), probe(0.2));
        assert_eq!(a.train_items, 1000);
        assert_eq!(b.train_items, 200);
        full.push(a.top1);
        fifth.push(b.top1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&full) >= mean(&fifth), "{full:?} vs {fifth:?}");
}
