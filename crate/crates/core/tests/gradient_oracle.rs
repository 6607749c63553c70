//! Finite-difference check of the full training objective on a tiny model.

mod support;

use fitmask::variants::VariantMode;

#[test]
fn full_objective_matches_central_differences() {
    for seed in 0..3 {
        let c = support::gradient_check(VariantMode::Ours, seed);
        assert!(c.parameters <= 5000, "{} parameters", c.parameters);
        assert!(c.worst < 1e-4, "seed {seed}: worst relative error {:e}", c.worst);
    }
}

#[test]
fn weighted_and_bilinear_variants_match_central_differences() {
    for mode in [VariantMode::OursDualpooling, VariantMode::SamSslBilinear, VariantMode::MlpGfb] {
        let c = support::gradient_check(mode, 11);
        assert!(c.worst < 1e-4, "{mode}: worst relative error {:e}", c.worst);
    }
}
