//! Experiment runner: JSON configuration, dispatch to the solvers and
//! CSV/JSON serialization of the resulting tables.

mod output;
mod runs;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error as SolverError;
use crate::periodic::{ControlSpec, PeriodicFn};
use crate::upwind::{AgeTail, GridSpec, MultiPhaseModel, OnePhaseModel, Phase, DEFAULT_C_TAIL};

pub use output::{format_float, write_report, Cell, RunReport, Table};
pub use runs::{run, run_chrono, run_floquet, run_perron, run_sweep_a, SweepResult, SweepRow};
pub use validate::{run_validate, CheckEntry, ConvergenceRow, ValidateOptions, ValidationReport, CHECK_IDS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Floquet,
    Perron,
    SweepA,
    Chrono,
    Validate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Floquet => "floquet",
            ExperimentKind::Perron => "perron",
            ExperimentKind::SweepA => "sweep-a",
            ExperimentKind::Chrono => "chrono",
            ExperimentKind::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    OnePhase {
        k0: f64,
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        death: Option<ControlSpec>,
    },
    /// Phases listed in cycle order; the last transition divides.
    MultiPhase { phases: Vec<PhaseConfig> },
    /// Controls `psi`, `psi(. - a2)`, `psi(. - a2 - a3)` built from `control.psi`.
    CommutingThreePhase { k: [f64; 3], a: [f64; 3] },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::OnePhase { k0: 2.0, a: 1.0, death: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub k: f64,
    pub a: f64,
    /// Defaults to `control.psi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<ControlSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death: Option<ControlSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TailConfig {
    #[default]
    Absorbing,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_time: usize,
    pub tail: TailConfig,
    /// Decay lengths kept by a truncated tail.
    pub c_tail: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_time: 1024, tail: TailConfig::Absorbing, c_tail: DEFAULT_C_TAIL }
    }
}

impl GridConfig {
    pub fn age_tail(&self) -> AgeTail {
        match self.tail {
            TailConfig::Absorbing => AgeTail::Absorbing,
            TailConfig::Truncated => AgeTail::Truncated { c_tail: self.c_tail },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub period: f64,
    pub psi: ControlSpec,
    pub gamma: ControlSpec,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { period: 1.0, psi: ControlSpec::new("sin", &[]), gamma: ControlSpec::new("cospow", &[6.0, 1.0]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub points: usize,
    pub thetas: usize,
    pub epsilons: Vec<f64>,
    /// One-based index of the treated phase.
    pub phase: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { a_min: 0.85, a_max: 1.15, points: 31, thetas: 64, epsilons: vec![0.1, 0.5, 1.0], phase: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub prefix: String,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { prefix: "chronogrowth".into(), format: OutputFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Seed for the randomized checks of `validate`.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Default settings; `chrono` starts from a three-phase cycle with a 10/12/2 hour split.
    pub fn new(experiment: ExperimentKind) -> Self {
        let model = match experiment {
            ExperimentKind::Chrono => ModelConfig::CommutingThreePhase {
                k: [10.0; 3],
                a: [10.0 / 24.0, 12.0 / 24.0, 2.0 / 24.0],
            },
            _ => ModelConfig::default(),
        };
        Self {
            experiment,
            model,
            grid: GridConfig::default(),
            control: ControlConfig::default(),
            sweep: SweepConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
            ConfigError::Parse { line: e.line(), column: e.column(), message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn control(&self, spec: &ControlSpec, field: &str) -> Result<PeriodicFn, ConfigError> {
        let mut spec = spec.clone();
        spec.period.get_or_insert(self.control.period);
        spec.build().map_err(|e| ConfigError::invalid(field, e))
    }

    pub fn psi(&self) -> Result<PeriodicFn, ConfigError> {
        self.control(&self.control.psi, "control.psi")
    }

    pub fn gamma(&self) -> Result<PeriodicFn, ConfigError> {
        self.control(&self.control.gamma, "control.gamma")
    }

    /// The one-phase model, if the config describes one.
    pub fn one_phase(&self) -> Result<Option<OnePhaseModel>, ConfigError> {
        match &self.model {
            ModelConfig::OnePhase { k0, a, death } => {
                let mut m = OnePhaseModel::new(*k0, *a, self.psi()?);
                if let Some(d) = death {
                    m.death = Some(self.control(d, "model.death")?);
                }
                Ok(Some(m))
            }
            _ => Ok(None),
        }
    }

    pub fn build_model(&self) -> Result<MultiPhaseModel, ConfigError> {
        let model = match &self.model {
            ModelConfig::OnePhase { .. } => {
                self.one_phase()?.expect("one-phase").to_multi().map_err(|e| ConfigError::invalid("model", e))?
            }
            ModelConfig::MultiPhase { phases } => {
                if phases.is_empty() {
                    return Err(ConfigError::invalid("model.phases", "at least one phase is required"));
                }
                let mut built = Vec::with_capacity(phases.len());
                for (i, p) in phases.iter().enumerate() {
                    let psi = match &p.psi {
                        Some(spec) => self.control(spec, &format!("model.phases[{i}].psi"))?,
                        None => self.psi()?,
                    };
                    let mut phase = Phase::new(p.k, p.a, psi);
                    if let Some(d) = &p.death {
                        phase = phase.with_death(self.control(d, &format!("model.phases[{i}].death"))?);
                    }
                    built.push(phase);
                }
                MultiPhaseModel::new(built).map_err(|e| ConfigError::invalid("model.phases", e))?
            }
            ModelConfig::CommutingThreePhase { k, a } => {
                MultiPhaseModel::commuting_three_phase(*k, *a, &self.psi()?)
                    .map_err(|e| ConfigError::invalid("model", e))?
            }
        };
        Ok(model)
    }

    pub fn grid_for(&self, model: &MultiPhaseModel) -> Result<GridSpec, ConfigError> {
        GridSpec::for_model(model, self.grid.n_time, self.grid.age_tail()).map_err(|e| ConfigError::invalid("grid", e))
    }

    /// Checks that every referenced control resolves and the grid is admissible.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.control.period.is_finite() && self.control.period > 0.0) {
            return Err(ConfigError::invalid("control.period", "must be positive"));
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            return Err(ConfigError::invalid("solver.tol", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(ConfigError::invalid("solver.max_iter", "must be nonzero"));
        }
        if self.grid.n_time == 0 {
            return Err(ConfigError::invalid("grid.n_time", "must be positive"));
        }
        if self.experiment == ExperimentKind::Validate {
            return Ok(());
        }
        let model = self.build_model()?;
        self.grid_for(&model)?;
        match self.experiment {
            ExperimentKind::SweepA => {
                let s = &self.sweep;
                if self.one_phase()?.is_none() {
                    return Err(ConfigError::invalid("model", "sweep-a needs a one-phase model"));
                }
                if !(s.a_min >= 0.0 && s.a_max > s.a_min) || s.points < 2 {
                    return Err(ConfigError::invalid("sweep", "need 0 <= a_min < a_max and at least 2 points"));
                }
            }
            ExperimentKind::Chrono => {
                self.gamma()?;
                let s = &self.sweep;
                if s.phase == 0 || s.phase > model.phases.len() {
                    return Err(ConfigError::invalid(
                        "sweep.phase",
                        format!("must be between 1 and {}", model.phases.len()),
                    ));
                }
                if s.thetas == 0 || s.epsilons.is_empty() {
                    return Err(ConfigError::invalid("sweep", "need offsets and amplitudes"));
                }
                if s.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                    return Err(ConfigError::invalid("sweep.epsilons", "amplitudes must be >= 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_blocks() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "floquet"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(ExperimentKind::Floquet));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Chrono);
        cfg.model = ModelConfig::CommutingThreePhase { k: [10.0; 3], a: [0.25, 0.5, 0.25] };
        cfg.sweep.epsilons = vec![0.2];
        cfg.seed = 7;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let multi = ExperimentConfig {
            model: ModelConfig::MultiPhase {
                phases: vec![
                    PhaseConfig { k: 3.0, a: 0.2, psi: Some(ControlSpec::new("square", &[])), death: None },
                    PhaseConfig { k: 4.0, a: 0.3, psi: None, death: Some(ControlSpec::new("constant", &[0.1])) },
                ],
            },
            ..ExperimentConfig::new(ExperimentKind::Floquet)
        };
        assert_eq!(ExperimentConfig::from_json(&multi.to_json()).unwrap(), multi);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = ExperimentConfig::from_json("{\n  \"experiment\": \"floquet\",\n  \"grid\": {\"n_time\": -3}\n}")
            .unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = ExperimentConfig::from_json(r#"{"experiment": "floquet", "typo": 1}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let text = r#"{"experiment": "chrono", "model": {"type": "commuting-three-phase", "k": [10,10,10], "a": [0.25,0.5,0.25]}, "sweep": {"phase": 4}}"#;
        match ExperimentConfig::from_json(text).unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "sweep.phase"),
            other => panic!("unexpected {other}"),
        }
        let text = r#"{"experiment": "floquet", "control": {"psi": {"kind": "triangle"}}}"#;
        match ExperimentConfig::from_json(text).unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "control.psi"),
            other => panic!("unexpected {other}"),
        }
        let text = r#"{"experiment": "sweep-a", "model": {"type": "commuting-three-phase", "k": [1,1,1], "a": [0.2,0.3,0.5]}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }
}
