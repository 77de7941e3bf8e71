//! Fixtures shared by the solver benchmarks.

use rsma_radcom::model::generate_channels;
use rsma_radcom::{CMatrix, Scenario, ScenarioConfig};

/// Default scenario for `seed`.
pub fn scenario(seed: u64) -> Scenario {
    ScenarioConfig::default()
        .with_seed(seed)
        .build()
        .expect("default scenario is valid")
}

/// A random ADMM target with the scenario's shape, entries scaled by `scale`.
pub fn target(scenario: &Scenario, seed: u64, scale: f64) -> CMatrix {
    let columns = generate_channels(scenario.num_streams(), scenario.num_antennas, seed);
    CMatrix::from_columns(&columns).map(|z| z * scale)
}
