//! Simulation and verification tools for a branching annihilating random walk
//! on the torus, run as a probabilistic cellular automaton.

pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod noise;
pub mod output;
pub mod point;
pub mod lineage;
pub mod profiles;
pub mod renorm;
pub mod stats;

pub use error::{BarwError, Result};
pub use lattice::Config;
pub use noise::{DrivingNoise, NoiseField, NoiseSlice, PlantedNoise};
pub use point::Point;
