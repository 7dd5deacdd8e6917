//! Fixtures shared by the criterion benches.

use clustervar::{generate, validate, SimConfig, ValidatedExperiment};

/// Default-shape dataset scaled to `n_clusters` clusters.
pub fn experiment(n_clusters: usize, seed: u64) -> ValidatedExperiment {
    let config = SimConfig {
        n_clusters,
        seed,
        ..SimConfig::default()
    };
    validate(generate(&config).expect("valid config")).expect("both arms populated")
}
