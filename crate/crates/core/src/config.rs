//! Serializable experiment descriptions shared by the AEG pipeline and the CLI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::GrowthConstants;
use crate::dynamics::{Scheme, SolverOptions};
use crate::model::{CoefficientModel, FragmentationKernel, ModelError, ModelSpec, Psi, Rate};
use crate::operators::TruncationPolicy;
use crate::spaces::{NormFlavor, StateVector};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Initial datum `f^in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `scale` clusters of size `index`.
    Delta { index: usize, scale: f64 },
    /// Explicit values `f_1, f_2, ...`, zero-padded to the truncation.
    Values { values: Vec<f64> },
}

impl InitialCondition {
    pub fn build(&self, n: usize) -> Result<StateVector, ConfigError> {
        match self {
            InitialCondition::Delta { index, scale } => {
                if *index == 0 || *index > n {
                    return Err(ConfigError::Invalid(format!("initial index {index} outside 1..={n}")));
                }
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(ConfigError::Invalid(format!("initial scale {scale} must be finite and nonnegative")));
                }
                Ok(StateVector::delta(n, *index, *scale))
            }
            InitialCondition::Values { values } => {
                if values.len() > n {
                    return Err(ConfigError::Invalid(format!("{} initial values exceed truncation {n}", values.len())));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(ConfigError::Invalid("initial values must be finite and nonnegative".into()));
                }
                let mut v = values.clone();
                v.resize(n, 0.0);
                Ok(StateVector::new(v).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        }
    }
}

fn default_true() -> bool {
    true
}

/// A complete, self-describing experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default = "ExperimentConfig::default_m")]
    pub m: f64,
    #[serde(default = "ExperimentConfig::default_m_prime")]
    pub m_prime: f64,
    pub truncation: usize,
    pub initial: InitialCondition,
    #[serde(default = "ExperimentConfig::default_t_span")]
    pub t_span: (f64, f64),
    #[serde(default = "ExperimentConfig::default_rtol")]
    pub rtol: f64,
    #[serde(default = "ExperimentConfig::default_atol")]
    pub atol: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub policy: TruncationPolicy,
    /// Spacing of the output grid; `None` gives 100 intervals.
    #[serde(default)]
    pub output_step: Option<f64>,
    #[serde(default = "ExperimentConfig::default_t_min")]
    pub t_min: f64,
    #[serde(default = "ExperimentConfig::default_eigen_tol")]
    pub eigen_tol: f64,
    #[serde(default)]
    pub error_norm: NormFlavor,
    /// Sizes whose densities are written as trace columns.
    #[serde(default)]
    pub sample_indices: Vec<usize>,
    #[serde(default)]
    pub growth_constants: Option<GrowthConstants>,
    /// Run even if a precondition verdict fails.
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Always true: no component of a run draws random numbers.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

impl ExperimentConfig {
    fn default_m() -> f64 {
        2.0
    }
    fn default_m_prime() -> f64 {
        3.0
    }
    fn default_t_span() -> (f64, f64) {
        (0.0, 20.0)
    }
    fn default_rtol() -> f64 {
        1e-8
    }
    fn default_atol() -> f64 {
        1e-12
    }
    fn default_t_min() -> f64 {
        1.0
    }
    fn default_eigen_tol() -> f64 {
        1e-10
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if !self.deterministic {
            return bad("deterministic must be true".into());
        }
        if !(self.m >= 1.0) {
            return bad(format!("m = {} must be at least 1", self.m));
        }
        if !(self.m_prime > self.m) {
            return bad(format!("m' = {} must exceed m = {}", self.m_prime, self.m));
        }
        if self.truncation < 16 {
            return bad(format!("truncation {} is below 16", self.truncation));
        }
        let (t0, t1) = self.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return bad(format!("t_span ({t0}, {t1}) must be finite and increasing"));
        }
        if !(self.t_min >= t0 && self.t_min < t1) {
            return bad(format!("t_min {} outside the time span", self.t_min));
        }
        if !(self.eigen_tol > 0.0) {
            return bad("eigen_tol must be positive".into());
        }
        if let Some(i) = self.sample_indices.iter().find(|&&i| i == 0 || i > self.truncation) {
            return bad(format!("sample index {i} outside 1..={}", self.truncation));
        }
        self.solver_options().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.initial.build(self.truncation)?;
        self.build_model()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<CoefficientModel, ConfigError> {
        Ok(CoefficientModel::from_spec(&self.model)?)
    }

    pub fn initial_state(&self) -> Result<StateVector, ConfigError> {
        self.initial.build(self.truncation)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            rtol: self.rtol,
            atol: self.atol,
            scheme: self.scheme,
            policy: self.policy,
            output_step: self.output_step,
            norm_order: self.m,
            ..SolverOptions::default()
        }
    }

    /// The configurations behind the three published figures.
    pub fn figure(id: &str) -> Option<Self> {
        let beta = 0.1;
        let psi_rate = Rate::Power { coeff: 1.0, exponent: 1.0 + beta };
        let model = match id {
            "fig1" => ModelSpec {
                label: "fig1".into(),
                fragmentation_rate: Some(Rate::Linear { coeff: 2.0 }),
                growth_rate: Rate::Linear { coeff: 1.0 },
                death_rate: Rate::Zero,
                kernel: FragmentationKernel::MonomerShatter,
            },
            "fig2" | "fig3" => ModelSpec {
                label: id.into(),
                fragmentation_rate: None,
                growth_rate: psi_rate.clone(),
                death_rate: psi_rate,
                kernel: FragmentationKernel::BinaryPsi {
                    psi: if id == "fig2" { Psi::SumPower { beta } } else { Psi::ProductPower { beta } },
                },
            },
            _ => return None,
        };
        Some(ExperimentConfig {
            model,
            m: 2.0,
            m_prime: 3.0,
            truncation: if id == "fig1" { 2000 } else { 800 },
            initial: InitialCondition::Delta { index: 10, scale: 10.0 },
            t_span: (0.0, 20.0),
            rtol: 1e-8,
            atol: 1e-12,
            scheme: Scheme::Sdirk4,
            policy: TruncationPolicy::Absorbing,
            output_step: Some(0.5),
            t_min: 1.0,
            eigen_tol: 1e-10,
            error_norm: NormFlavor::Power,
            sample_indices: vec![1, 2, 5, 10, 20, 50],
            growth_constants: None,
            force: false,
            output_dir: None,
            deterministic: true,
        })
    }
}
