//! Run configuration: TOML with dotted keys, unknown keys rejected.

use std::path::Path;

use barw_core::renorm::ScaleOverrides;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub model: ModelSection,
    #[serde(default)]
    pub lattice: LatticeSection,
    pub simulate: Option<SimulateSection>,
    pub certify: Option<CertifySection>,
    pub block: Option<BlockSection>,
    pub scales: Option<ScalesSection>,
    pub lineage: Option<LineageSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu: f64,
    #[serde(rename = "R")]
    pub radius: usize,
    #[serde(rename = "d", default = "one")]
    pub dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub side: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Steps from Bernoulli(theta) before the recorded trajectory.
    #[serde(default)]
    pub burn_in: usize,
    pub steps: usize,
    /// Absolute times to snapshot; defaults to the last time.
    pub snapshot_times: Option<Vec<i64>>,
    /// Radius of the local densities in the time series; defaults to `R`.
    pub density_radius: Option<usize>,
    #[serde(default = "default_retry_cap")]
    pub retry_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub radii: Vec<usize>,
    pub r_max: usize,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_margin")]
    pub contraction_margin: f64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    /// Grid-search `s, w, eps0, delta0` instead of taking them from this section.
    #[serde(default)]
    pub search: bool,
    pub s: Option<f64>,
    pub w: Option<f64>,
    pub eps0: Option<f64>,
    pub delta0: Option<f64>,
    /// Monte Carlo trials per site for the one-step bracket probability; 0 skips it.
    #[serde(default)]
    pub uk_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    /// Dispersal radii to probe; defaults to `model.R`.
    pub radii: Option<Vec<usize>>,
    /// Use the mini-scale overrides instead of the `scales` section.
    #[serde(default = "yes")]
    pub mini: bool,
    pub trials: usize,
    #[serde(default = "default_block_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub goodness_extent: usize,
    #[serde(default = "one")]
    pub goodness_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesSection {
    pub s: f64,
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    #[serde(rename = "override", default)]
    pub overrides: OverrideSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSection {
    #[serde(rename = "L_s")]
    pub l_s: Option<usize>,
    #[serde(rename = "T_spread")]
    pub t_spread: Option<usize>,
    #[serde(rename = "T_couple")]
    pub t_couple: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
}

impl From<OverrideSection> for ScaleOverrides {
    fn from(o: OverrideSection) -> Self {
        ScaleOverrides { l_s: o.l_s, t_spread: o.t_spread, t_couple: o.t_couple, m: o.m }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageSection {
    pub paths: usize,
    pub steps: usize,
    #[serde(default = "default_lineage_burn_in")]
    pub burn_in: usize,
    /// Defaults to powers of two up to `steps`.
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lln_threshold")]
    pub lln_threshold: f64,
    /// Number of paths written to the CSV; defaults to all.
    pub csv_paths: Option<usize>,
    pub speed: Option<SpeedSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSection {
    #[serde(rename = "L_s")]
    pub l_s: usize,
    #[serde(rename = "L_t")]
    pub l_t: usize,
    pub paths: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub side: usize,
    #[serde(default = "default_lineage_burn_in")]
    pub burn_in: usize,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_retry_cap() -> usize {
    5
}
fn default_k0() -> usize {
    16
}
fn default_alpha1() -> f64 {
    0.05
}
fn default_beta1() -> f64 {
    0.4
}
fn default_slack() -> f64 {
    0.1
}
fn default_margin() -> f64 {
    0.1
}
fn default_m_max() -> usize {
    30
}
fn default_block_burn_in() -> usize {
    10
}
fn default_m() -> usize {
    4
}
fn default_lineage_burn_in() -> usize {
    100
}
fn default_alpha() -> f64 {
    0.01
}
fn default_lln_threshold() -> f64 {
    0.1
}
fn default_delta() -> f64 {
    0.1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn side(&self) -> Result<usize, CliError> {
        self.lattice.side.ok_or_else(|| CliError::Config("missing key lattice.side".into()))
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing section [{name}]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_renames() {
        let c = RunConfig::parse(
            "model.mu = 2.0\nmodel.R = 20\nlattice.side = 4096\nscales.s = 0.5\nscales.override.L_s = 64\nsimulate.steps = 3\n",
        )
        .unwrap();
        assert_eq!(c.model.radius, 20);
        assert_eq!(c.model.dim, 1);
        assert_eq!(c.scales.unwrap().overrides.l_s, Some(64));
        assert_eq!(c.simulate.unwrap().retry_cap, 5);
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let err = RunConfig::parse("model.mu = 2.0\nmodel.R = 3\nmodel.radius = 4\n").unwrap_err().to_string();
        assert!(err.contains("radius"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }
}
