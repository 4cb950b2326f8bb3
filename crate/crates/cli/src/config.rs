//! Experiment configuration (JSON, unknown keys rejected).

use std::path::Path;

use dirac_ibvp::boundary::FamilyConfig;
use dirac_ibvp::evolve::{Scheme, SourceSpec};
use dirac_ibvp::geometry::Geometry;
use dirac_ibvp::green::TestSpinor;
use dirac_ibvp::oracle::BumpProfile;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub grid: GridConfig,
    pub boundary: FamilyConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    /// Defaults to `h/2`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub window: [f64; 2],
    #[serde(default)]
    pub t_initial: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub initial: Vec<BumpProfile>,
    #[serde(default)]
    pub source: SourceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Mollifier ladder; the first entry drives `simulate` with the RK4 scheme.
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Times written to the trajectory CSV; defaults to 11 equispaced times.
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
    /// Skip the admissibility and self-adjointness gates (negative controls).
    #[serde(default)]
    pub unchecked: bool,
}

fn default_scheme() -> Scheme {
    Scheme::CrankNicolson
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { scheme: default_scheme(), epsilon: Vec::new(), seed: 0, snapshot_times: None, unchecked: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Admissibility,
    Continuity,
    Flux,
    Energy,
    Support,
    Green,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Admissibility, Suite::Continuity, Suite::Flux, Suite::Energy, Suite::Support, Suite::Green];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Admissibility => "admissibility",
            Suite::Continuity => "continuity",
            Suite::Flux => "flux",
            Suite::Energy => "energy",
            Suite::Support => "support",
            Suite::Green => "green",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_suites")]
    pub suites: Vec<Suite>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Randomized data sets for the energy and support suites.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub continuity: ContinuityConfig,
    #[serde(default)]
    pub green: Option<GreenConfig>,
}

fn default_suites() -> Vec<Suite> {
    vec![Suite::Admissibility, Suite::Flux, Suite::Energy, Suite::Support]
}

fn default_samples() -> usize {
    50
}

fn default_trials() -> usize {
    10
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            suites: default_suites(),
            samples: default_samples(),
            trials: default_trials(),
            continuity: ContinuityConfig::default(),
            green: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityConfig {
    #[serde(default = "default_probe_nx")]
    pub nx: usize,
    #[serde(default = "default_probe_epsilon")]
    pub epsilon: f64,
    /// Sample counts; differences should scale like the spacing.
    #[serde(default = "default_probe_samples")]
    pub samples: Vec<usize>,
}

fn default_probe_nx() -> usize {
    24
}

fn default_probe_epsilon() -> f64 {
    0.1
}

fn default_probe_samples() -> Vec<usize> {
    vec![5, 9, 17]
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        ContinuityConfig { nx: default_probe_nx(), epsilon: default_probe_epsilon(), samples: default_probe_samples() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    /// Optional `ψ` for the `G±Dψ = ψ` check.
    #[serde(default)]
    pub test: Option<TestSpinor>,
    #[serde(default = "default_green_residual")]
    pub residual_tolerance: f64,
}

fn default_green_residual() -> f64 {
    1e-2
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: dirac_ibvp::Error| CliError::Config(e.to_string());
        if !(self.geometry.length > 0.0) {
            return Err(CliError::Config("geometry length must be positive".into()));
        }
        self.geometry.lapse.validate().map_err(cfg)?;
        let [t0, t1] = self.grid.window;
        if !(t0 <= self.grid.t_initial && self.grid.t_initial <= t1) {
            return Err(CliError::Config("t_initial must lie in the window".into()));
        }
        if let Some(dt) = self.grid.dt {
            if !(dt > 0.0) {
                return Err(CliError::Config("dt must be positive".into()));
            }
        }
        for b in &self.data.initial {
            b.validate(self.geometry.length).map_err(cfg)?;
        }
        self.data.source.validate().map_err(cfg)?;
        if self.run.epsilon.iter().any(|e| !(*e > 0.0)) {
            return Err(CliError::Config("mollifier parameters must be positive".into()));
        }
        if self.run.scheme == Scheme::MollifiedRk4 && self.run.epsilon.is_empty() {
            return Err(CliError::Config("the mollified scheme needs at least one epsilon".into()));
        }
        Ok(())
    }
}
