//! Experiment configuration: a TOML or JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use beamobs::estimate::UkfSettings;
use beamobs::{BeamConfig, TimeQuadrature};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SystemChoice {
    Truncated,
    Continuum,
    Both,
}

impl SystemChoice {
    pub fn variants(self) -> Vec<SystemChoice> {
        match self {
            SystemChoice::Both => vec![SystemChoice::Truncated, SystemChoice::Continuum],
            other => vec![other],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemChoice::Truncated => "truncated",
            SystemChoice::Continuum => "continuum",
            SystemChoice::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Time grid shared by Gramians and simulations, in units of the slowest
/// modal period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon_periods: f64,
    pub steps_per_period: usize,
    pub quadrature: TimeQuadrature,
    pub epsilon: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon_periods: 1.0,
            steps_per_period: 2000,
            quadrature: TimeQuadrature::Simpson,
            epsilon: beamobs::gramian::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub mode_counts: Vec<usize>,
    pub system: SystemChoice,
    pub weight: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            mode_counts: (2..=10).collect(),
            system: SystemChoice::Both,
            weight: beamobs::placement::DEFAULT_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaceConfig {
    pub n_modes: usize,
    pub budgets: Vec<usize>,
    pub weight: f64,
    pub system: SystemChoice,
    pub max_iterations: usize,
    pub gap_tolerance: f64,
}

impl Default for PlaceConfig {
    fn default() -> Self {
        Self {
            n_modes: 8,
            budgets: (1..=50).collect(),
            weight: beamobs::placement::DEFAULT_WEIGHT,
            system: SystemChoice::Both,
            max_iterations: 500,
            gap_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub n_modes: usize,
    pub budget: usize,
    pub trials: usize,
    pub weight: f64,
    /// Tip deflection of the static tip-load shape used as the truth
    /// initial displacement.
    pub tip_deflection_m: f64,
    pub ukf: UkfSettings,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            n_modes: 10,
            budget: 10,
            trials: 20,
            weight: beamobs::placement::DEFAULT_WEIGHT,
            tip_deflection_m: 0.01,
            ukf: UkfSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub format: OutputFormat,
    /// Beam and grid; `n_modes` is the mode count of the `modes` output.
    pub beam: BeamConfig,
    pub simulation: SimulationConfig,
    pub scan: ScanConfig,
    pub place: PlaceConfig,
    pub estimate: EstimateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 1,
            format: OutputFormat::Csv,
            beam: BeamConfig {
                n_modes: 10,
                ..BeamConfig::default()
            },
            simulation: SimulationConfig::default(),
            scan: ScanConfig::default(),
            place: PlaceConfig::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub modes: Option<usize>,
    pub system: Option<SystemChoice>,
    pub format: Option<OutputFormat>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// `--modes` sets the mode count of every subcommand; `--budget` the
    /// estimation budget and, as a single-entry sweep, the placement budget.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(format) = o.format {
            self.format = format;
        }
        if let Some(k) = o.modes {
            self.beam.n_modes = k;
            self.place.n_modes = k;
            self.estimate.n_modes = k;
            self.scan.mode_counts.retain(|&n| n <= k);
            if self.scan.mode_counts.is_empty() {
                self.scan.mode_counts = vec![k];
            }
        }
        if let Some(p) = o.budget {
            self.place.budgets = vec![p];
            self.estimate.budget = p;
        }
        if let Some(system) = o.system {
            self.scan.system = system;
            self.place.system = system;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.beam.spec().map_err(|e| CliError::Config(e.to_string()))?;
        let sim = &self.simulation;
        if !(sim.horizon_periods > 0.0 && sim.horizon_periods.is_finite()) {
            return bad(format!("simulation.horizon_periods must be > 0, got {}", sim.horizon_periods));
        }
        if sim.steps_per_period < 2 {
            return bad("simulation.steps_per_period must be >= 2".into());
        }
        if !(sim.epsilon > 0.0 && sim.epsilon.is_finite()) {
            return bad(format!("simulation.epsilon must be > 0, got {}", sim.epsilon));
        }
        let max_modes = self.beam.grid_size / 20;
        let mode_counts = [
            ("beam.n_modes", self.beam.n_modes),
            ("place.n_modes", self.place.n_modes),
            ("estimate.n_modes", self.estimate.n_modes),
        ];
        for (name, n) in mode_counts.into_iter().chain(self.scan.mode_counts.iter().map(|&n| ("scan.mode_counts", n))) {
            if n == 0 || n > max_modes {
                return bad(format!(
                    "{name} = {n} must be in 1..={max_modes} for a grid of {} points",
                    self.beam.grid_size
                ));
            }
        }
        if self.scan.mode_counts.is_empty() {
            return bad("scan.mode_counts must not be empty".into());
        }
        for (name, w) in [
            ("scan.weight", self.scan.weight),
            ("place.weight", self.place.weight),
            ("estimate.weight", self.estimate.weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be >= 0, got {w}"));
            }
        }
        if self.place.budgets.is_empty() {
            return bad("place.budgets must not be empty".into());
        }
        if let Some(p) = self.place.budgets.iter().find(|&&p| p == 0 || p > self.beam.grid_size) {
            return bad(format!("place.budgets entry {p} must be in 1..={}", self.beam.grid_size));
        }
        if !(self.place.gap_tolerance > 0.0) || self.place.max_iterations == 0 {
            return bad("place.gap_tolerance and place.max_iterations must be positive".into());
        }
        let est = &self.estimate;
        if est.budget == 0 || est.budget > self.beam.grid_size {
            return bad(format!("estimate.budget must be in 1..={}", self.beam.grid_size));
        }
        if est.trials == 0 {
            return bad("estimate.trials must be >= 1".into());
        }
        if !est.tip_deflection_m.is_finite() {
            return bad("estimate.tip_deflection_m must be finite".into());
        }
        let u = &est.ukf;
        for (name, v) in [
            ("estimate.ukf.process_noise", u.process_noise),
            ("estimate.ukf.measurement_noise", u.measurement_noise),
            ("estimate.ukf.initial_displacement_variance", u.initial_displacement_variance),
            ("estimate.ukf.initial_velocity_variance", u.initial_velocity_variance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(u.measurement_noise > 0.0) {
            return bad("estimate.ukf.measurement_noise must be > 0".into());
        }
        if !(u.alpha > 0.0) {
            return bad("estimate.ukf.alpha must be > 0".into());
        }
        Ok(())
    }
}
