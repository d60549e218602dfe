//! Declarative experiment configuration (JSON) with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sch_core::dynamics::ModelParams;
use sch_core::noise::NoiseSpec;
use sch_core::profile::Interface;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ConvolutionScaling,
    EnergyFunctional,
    DeterministicLadder,
    StochasticError,
    SpectralEstimate,
    InterpInequality,
    AprioriCheck,
    EventProbability,
    TraceCheck,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ConvolutionScaling => "convolution-scaling",
            ExperimentKind::EnergyFunctional => "energy-functional",
            ExperimentKind::DeterministicLadder => "deterministic-ladder",
            ExperimentKind::StochasticError => "stochastic-error",
            ExperimentKind::SpectralEstimate => "spectral-estimate",
            ExperimentKind::InterpInequality => "interp-inequality",
            ExperimentKind::AprioriCheck => "apriori-check",
            ExperimentKind::EventProbability => "event-probability",
            ExperimentKind::TraceCheck => "trace-check",
        }
    }
}

/// Which pathwise statistic convolution/event experiments record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    /// `sup_t ∥Z∥^p_{L^p}`
    #[default]
    LpSup,
    /// `sup_t ∥(−Δ)^{1−d/4−ϑ/2}Z∥^p`
    FracSup,
    /// `sup_{D_T} |Z|`
    UniformSup,
}

/// Initial datum for simulation experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum InitialSpec {
    Zero,
    Constant { value: f64 },
    /// tanh profile of the configured interface
    Tanh,
}

/// Event thresholds as configured (σ* is derived from the noise σ at use).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub c1: f64,
    pub delta: f64,
    #[serde(default)]
    pub eta: f64,
    pub theta: f64,
    #[serde(default)]
    pub kappa: f64,
    pub gamma: f64,
    /// Override for the Ω̃ threshold exponent (see analysis::EventSpec).
    #[serde(default)]
    pub tilde_exponent: Option<f64>,
}

/// Kind-specific knobs; unused fields are ignored by other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindOptions {
    /// Lp exponent for convolution statistics.
    pub p: f64,
    pub stat: StatKind,
    /// Fractional-norm ϑ.
    pub theta: f64,
    /// Trajectory recording stride.
    pub record_stride: usize,
    /// Asserted slope window `[lo, hi]` for rate checks (omit to only report).
    pub slope_window: Option<(f64, f64)>,
    /// Interface data for profile-based experiments.
    pub interface: Option<Interface>,
    pub initial: Option<InitialSpec>,
    /// Calibration sample count for fit-then-assert protocols.
    pub calib_samples: usize,
    /// Multiplier applied to calibrated constants before asserting.
    pub calibration_margin: f64,
    /// Interpolation-inequality grids.
    pub r_values: Vec<f64>,
    pub alpha_values: Vec<f64>,
    pub c_tilde: f64,
    /// Stopping-time exponent γ; when absent it is set so that ε^γ sits
    /// `stopping_margin`× above the largest measured integral.
    pub gamma: Option<f64>,
    pub stopping_margin: f64,
    /// Eigensolver controls.
    pub tol: f64,
    pub max_iter: usize,
    /// Constant-profile value for diagonal spectral-estimate runs.
    pub constant_profile: Option<f64>,
    /// Trace-check parameters.
    pub upsilon: f64,
    pub n_max: usize,
    /// Reference convergent exponent for the trace dichotomy.
    pub reference_alpha: f64,
    /// Extract and track interface radii along deterministic runs.
    pub track_interface: bool,
    /// Asserted bound on relative radius drift of a single circle.
    pub max_radius_drift: f64,
    /// Asserted bound on the coefficient of variation of w on the band.
    pub max_w_band_cv: f64,
    /// Asserted uniform lower bound −C₀ for the spectral estimate.
    pub c0_bound: f64,
    /// Target calibration probability for event experiments.
    pub target_p: f64,
    /// Assert that per-ε medians/values decrease monotonically.
    pub assert_monotone: bool,
}

impl Default for KindOptions {
    fn default() -> Self {
        KindOptions {
            p: 2.0,
            stat: StatKind::LpSup,
            theta: 0.2,
            record_stride: 1,
            slope_window: None,
            interface: None,
            initial: None,
            calib_samples: 0,
            calibration_margin: 1.1,
            r_values: vec![2.25, 2.5, 8.0 / 3.0],
            alpha_values: vec![0.0, 0.5, 1.0],
            c_tilde: 1.0,
            gamma: None,
            stopping_margin: 10.0,
            tol: 1e-8,
            max_iter: 500,
            constant_profile: None,
            upsilon: 0.1,
            n_max: 32,
            reference_alpha: -2.0,
            track_interface: false,
            max_radius_drift: 0.02,
            max_w_band_cv: 0.1,
            c0_bound: 50.0,
            target_p: 0.9,
            assert_monotone: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Strictly decreasing ε ladder (a single entry is a plain run).
    pub epsilon_ladder: Vec<f64>,
    /// Template; `epsilon` is replaced by each ladder entry and `noise` by
    /// the top-level noise field.
    pub model: ModelParams,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub event: Option<EventParams>,
    pub samples: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Snapshot every k-th recorded step as SCHF (0 disables).
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub options: KindOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epsilon_ladder.is_empty() {
            return Err(HarnessError::Config("epsilon_ladder must be non-empty".into()));
        }
        if self.epsilon_ladder.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(HarnessError::Config("epsilon values must lie in (0, 1]".into()));
        }
        if self.epsilon_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(HarnessError::Config("epsilon_ladder must be strictly decreasing".into()));
        }
        if self.samples < 1 {
            return Err(HarnessError::Config("samples must be >= 1".into()));
        }
        if let Some(noise) = &self.noise {
            noise
                .validate()
                .map_err(|e| HarnessError::Config(format!("noise: {e}")))?;
        }
        Ok(())
    }

    /// The model for one rung of the ladder.
    pub fn model_at(&self, epsilon: f64) -> ModelParams {
        let mut m = self.model;
        m.epsilon = epsilon;
        m.noise = self.noise;
        m.frac_theta = self.options.theta;
        m
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad JSON in {}: {e}", path.display())))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let config: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| HarnessError::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// Apply one `--set key.path=value` override onto the raw JSON.
fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<(), HarnessError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("--set expects key=value, got '{spec}'")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match cursor {
                serde_json::Value::Object(map) => {
                    map.insert(part.to_string(), parsed);
                    return Ok(());
                }
                _ => {
                    return Err(HarnessError::Config(format!(
                        "--set path '{path}' does not address an object"
                    )))
                }
            }
        }
        cursor = match cursor {
            serde_json::Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default())),
            _ => {
                return Err(HarnessError::Config(format!(
                    "--set path '{path}' does not address an object"
                )))
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sch_core::grid::GridSpec;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::ConvolutionScaling,
            epsilon_ladder: vec![0.4, 0.2, 0.1],
            model: ModelParams {
                epsilon: 0.4,
                grid: GridSpec::new(2, 8, 2).unwrap(),
                dt: 0.01,
                t_final: 1.0,
                noise: None,
                dealias_pad: 2,
                frac_theta: 0.2,
            },
            noise: Some(NoiseSpec::white(1.0)),
            event: None,
            samples: 4,
            base_seed: 7,
            output_dir: PathBuf::from("/tmp/out"),
            snapshot_stride: 0,
            options: KindOptions::default(),
        }
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = base_config();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn ladder_must_decrease() {
        let mut config = base_config();
        config.epsilon_ladder = vec![0.1, 0.2];
        assert!(config.validate().is_err());
        config.epsilon_ladder = vec![0.2, 0.2];
        assert!(config.validate().is_err());
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let config = base_config();
        let mut value = serde_json::to_value(&config).unwrap();
        apply_override(&mut value, "samples=16").unwrap();
        apply_override(&mut value, "model.dt=0.5").unwrap();
        apply_override(&mut value, "options.p=4.0").unwrap();
        let back: ExperimentConfig = serde_json::from_value(value).unwrap();
        assert_eq!(back.samples, 16);
        assert_eq!(back.model.dt, 0.5);
        assert_eq!(back.options.p, 4.0);
        let mut value = serde_json::to_value(&config).unwrap();
        assert!(apply_override(&mut value, "nonsense").is_err());
    }
}
