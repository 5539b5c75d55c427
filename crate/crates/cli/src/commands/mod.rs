pub mod block;
pub mod certify;
pub mod lineage;
pub mod simulate;
pub mod verify;

use barw_core::NoiseField;

use crate::config::RunConfig;

/// What a subcommand reports back to the driver.
#[derive(Debug, Default)]
pub struct Outcome {
    pub pass: bool,
    /// Human-readable summary, one line each.
    pub lines: Vec<String>,
}

/// Base noise field of a run.
pub fn run_noise(cfg: &RunConfig) -> NoiseField {
    NoiseField::new(cfg.run.seed, cfg.run.stream)
}

/// A derived 64-bit seed for the stateful samplers of a run.
pub fn run_seed(cfg: &RunConfig, tag: u64) -> u64 {
    run_noise(cfg).rng_seed(tag)
}
