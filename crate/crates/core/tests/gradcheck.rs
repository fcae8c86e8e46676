//! Whole-model gradient verification against central finite differences.

use han_core::gradcheck::{run_gradient_check, DEFAULT_STEP};
use han_core::model::ModelConfig;
use han_core::numerics::Rng;

#[test]
fn five_random_tiny_configurations_pass() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(900 + seed);
        let config = ModelConfig {
            regions_per_side: 1 + rng.index(2),
            feature_dim: 2 + rng.index(3),
            hidden: 2 + rng.index(4),
            layers: 2,
            skip: 1 + rng.index(3),
            frames: 2 + rng.index(5),
            classes: 2 + rng.index(3),
        };
        // Slightly larger step than the single-config default: across random
        // configs the smallest gradient coordinates vary, and a larger step
        // keeps rounding noise below them.
        let report = run_gradient_check(&config, seed, 3e-4, 1e-4, None).unwrap();
        assert!(
            report.passed(),
            "seed {seed} config {config:?}: worst {:?}",
            report.worst()
        );
    }
}

#[test]
fn reference_configuration_passes_quickly() {
    let config = ModelConfig {
        regions_per_side: 2,
        feature_dim: 4,
        hidden: 5,
        layers: 2,
        skip: 2,
        frames: 6,
        classes: 3,
    };
    let report = run_gradient_check(&config, 8, DEFAULT_STEP, 1e-4, None).unwrap();
    assert_eq!(report.blocks.len(), 51);
    assert!(report.passed(), "worst {:?}", report.worst());
    assert!(report.seconds < 60.0);
}
