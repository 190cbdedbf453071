//! Fixtures shared by the pipeline benchmarks.

use netcausal::simlab::{generate_scenario, Scenario};
use netcausal::ScenarioConfig;

/// Default-sized scenario-1 data set (30 clusters of 100 units).
pub fn default_scenario(h: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig { h, reps: 1, ..ScenarioConfig::default() };
    generate_scenario(&cfg, seed).expect("default config is valid")
}

/// Scenario-1 configuration with `reps` replications.
pub fn default_config(h: f64, reps: usize) -> ScenarioConfig {
    ScenarioConfig { h, reps, ..ScenarioConfig::default() }
}
