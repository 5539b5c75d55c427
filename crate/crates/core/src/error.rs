use thiserror::Error;

use crate::point::Point;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarwError {
    #[error("dimension {0} is not supported (expected 1..=3)")]
    UnsupportedDimension(usize),

    #[error("ball of radius {radius} needs side >= {}, torus side is {side}", 2 * radius + 1)]
    BallTooLarge { radius: usize, side: usize },

    #[error("torus side {side} too small, need at least {needed}")]
    TorusTooSmall { side: usize, needed: usize },

    #[error("{what} out of domain: expected {expected}, got {value}")]
    Domain {
        what: &'static str,
        expected: &'static str,
        value: f64,
    },

    #[error("phi is not a contraction around theta: kappa = {kappa} >= {limit} at eps = {eps}")]
    NotContraction { kappa: f64, limit: f64, eps: f64 },

    #[error("fixpoint bracketing fails at index {index}: {detail}")]
    NestingFailure { index: usize, detail: String },

    #[error("no index m <= {m_max} puts alpha_m and beta_m within eps_fp = {eps_fp} of theta")]
    M0NotFound { m_max: usize, eps_fp: f64 },

    #[error("{divisor} does not divide {value}")]
    NotDivisible { divisor: usize, value: usize },

    #[error("no occupied site within distance {radius} of {site}")]
    EmptyNeighbourhood { site: Point, radius: usize },

    #[error("child {child} at generation {generation} has no recorded parent")]
    MissingParent { child: Point, generation: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = BarwError> = std::result::Result<T, E>;
