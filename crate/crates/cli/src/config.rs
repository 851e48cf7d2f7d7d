//! Declarative experiment configuration: a strict JSON schema validated
//! before any computation starts. Unknown keys anywhere are rejected.

use serde::{Deserialize, Serialize};

use qcorridor::{CMatrix, MeasurementSpec, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Selective,
    Sse,
    Lindblad,
    Monitor,
    ZenoScan,
    Diffusion,
    Superselection,
    SoftMeter,
    ConsistencySuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Selective => "selective",
            ExperimentKind::Sse => "sse",
            ExperimentKind::Lindblad => "lindblad",
            ExperimentKind::Monitor => "monitor",
            ExperimentKind::ZenoScan => "zeno-scan",
            ExperimentKind::Diffusion => "diffusion",
            ExperimentKind::Superselection => "superselection",
            ExperimentKind::SoftMeter => "soft-meter",
            ExperimentKind::ConsistencySuite => "consistency-suite",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SystemSection {
    pub levels: Vec<f64>,
    pub coupling_re: Vec<Vec<f64>>,
    pub coupling_im: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct MeasurementSection {
    pub kappa: f64,
    pub duration: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SamplingSection {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing_window: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SuperselectionSection {
    pub n_bits: u32,
    pub theta: f64,
    /// |C_1|^2 of the initial superposition.
    pub initial_population: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct DiffusionSection {
    pub grid_points: usize,
    pub box_half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    pub separation_cells: usize,
    pub duration: f64,
    pub snapshots: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SoftMeterSection {
    pub p_positive: Vec<f64>,
    pub step_interval: f64,
    pub series_length: usize,
    pub n_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ZenoScanSection {
    pub kappas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_projective: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub system: SystemSection,
    pub measurement: MeasurementSection,
    pub sampling: SamplingSection,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub superselection: Option<SuperselectionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soft_meter: Option<SoftMeterSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeno_scan: Option<ZenoScanSection>,
}

/// A config problem with enough context to point at the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            ConfigError(format!("config parse error at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Build the domain objects; every invariant violation surfaces as a
    /// config error, before any computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_system()?;
        self.build_measurement()?;
        if self.sampling.n_samples == 0 {
            return Err(ConfigError("sampling.nSamples: must be at least 1".into()));
        }
        if let Some(w) = self.sampling.smoothing_window {
            if w <= 0.0 {
                return Err(ConfigError("sampling.smoothingWindow: must be positive".into()));
            }
        }
        match self.experiment {
            ExperimentKind::Superselection => {
                let sect = self.superselection.as_ref().ok_or_else(|| {
                    ConfigError("superselection: section required for this experiment".into())
                })?;
                qcorridor::nonselective::EnvironmentModel::new(sect.n_bits, sect.theta)
                    .map_err(|e| ConfigError(format!("superselection: {e}")))?;
                if !(0.0..=1.0).contains(&sect.initial_population) {
                    return Err(ConfigError(
                        "superselection.initialPopulation: must lie in [0, 1]".into(),
                    ));
                }
            }
            ExperimentKind::Diffusion => {
                let sect = self
                    .diffusion
                    .as_ref()
                    .ok_or_else(|| ConfigError("diffusion: section required".into()))?;
                if sect.grid_points < 8 {
                    return Err(ConfigError("diffusion.gridPoints: need at least 8".into()));
                }
                if sect.separation_cells * 2 >= sect.grid_points {
                    return Err(ConfigError(
                        "diffusion.separationCells: must fit inside the grid".into(),
                    ));
                }
                if !(sect.duration > 0.0) || sect.snapshots == 0 || !(sect.kappa >= 0.0) {
                    return Err(ConfigError(
                        "diffusion: duration and snapshots must be positive, kappa nonnegative"
                            .into(),
                    ));
                }
            }
            ExperimentKind::SoftMeter => {
                let sect = self
                    .soft_meter
                    .as_ref()
                    .ok_or_else(|| ConfigError("softMeter: section required".into()))?;
                qcorridor::meter::SoftMeter::new(sect.p_positive.clone(), sect.step_interval)
                    .map_err(|e| ConfigError(format!("softMeter: {e}")))?;
                if sect.series_length == 0 || sect.n_runs == 0 {
                    return Err(ConfigError(
                        "softMeter.seriesLength and softMeter.nRuns must be positive".into(),
                    ));
                }
            }
            ExperimentKind::ZenoScan => {
                let sect = self
                    .zeno_scan
                    .as_ref()
                    .ok_or_else(|| ConfigError("zenoScan: section required".into()))?;
                if sect.kappas.is_empty() {
                    return Err(ConfigError("zenoScan.kappas: need at least one value".into()));
                }
                if sect.kappas.iter().any(|k| *k < 0.0) {
                    return Err(ConfigError("zenoScan.kappas: must be nonnegative".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemSpec, ConfigError> {
        let n = self.system.levels.len();
        let ok_shape = self.system.coupling_re.len() == n
            && self.system.coupling_im.len() == n
            && self.system.coupling_re.iter().all(|r| r.len() == n)
            && self.system.coupling_im.iter().all(|r| r.len() == n);
        if !ok_shape {
            return Err(ConfigError(
                "system.couplingRe/couplingIm: must be square matrices matching levels".into(),
            ));
        }
        let mut coupling = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                coupling[(i, j)] = num_complex::Complex64::new(
                    self.system.coupling_re[i][j],
                    self.system.coupling_im[i][j],
                );
            }
        }
        SystemSpec::new(self.system.levels.clone(), coupling, self.system.pulse_window)
            .map_err(|e| ConfigError(format!("system: {e}")))
    }

    pub fn build_measurement(&self) -> Result<MeasurementSpec, ConfigError> {
        let sys = self.build_system()?;
        MeasurementSpec::new(
            self.measurement.kappa,
            self.measurement.duration,
            self.measurement.dt,
            sys.level_gap(),
        )
        .map_err(|e| ConfigError(format!("measurement: {e}")))
    }
}
