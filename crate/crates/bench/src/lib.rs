//! Shared fixtures for the criterion benches.

use jgsw_core::encoder::EncoderParams;
use jgsw_core::grid::{GridSpec, MetaUtilityMap};
use jgsw_core::scene::{generate_scenario, SceneOptions, Scenario};
use jgsw_core::seed;
use jgsw_core::train::ModelParams;

/// The desk-scale default geometry.
pub fn default_grid() -> GridSpec {
    GridSpec::new(48, 96, 64, 0.8).unwrap()
}

pub fn default_scenario(n_agents: usize, seed: u64) -> Scenario {
    generate_scenario(
        n_agents,
        12,
        default_grid(),
        seed,
        SceneOptions {
            sensing_radius: 30.0,
            noise_sigma: 0.05,
            feature_amplitude: 1.0,
        },
    )
    .unwrap()
}

pub fn default_params() -> ModelParams {
    ModelParams::init(64, EncoderParams::new(0.01, 0.0).unwrap(), 0.05, 1)
}

/// Random sparse utility fields over `n_agents` agents with the given fill
/// fraction.
pub fn random_utility_maps(n_agents: usize, fill: f64, key: u64) -> Vec<MetaUtilityMap> {
    use rand::Rng;
    let grid = default_grid();
    let mut rng = seed::rng(&[key, 0xBE7C]);
    (0..n_agents)
        .map(|a| {
            let mut m = MetaUtilityMap::new(grid, a as u16);
            for l in 0..grid.num_cells() {
                if rng.random::<f64>() < fill {
                    m.insert(l, rng.random_range(0.001..2.0)).unwrap();
                }
            }
            m
        })
        .collect()
}
