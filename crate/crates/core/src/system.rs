//! System and measurement specifications.
//!
//! All propagators in this crate work in the interaction picture: the free
//! Hamiltonian is absorbed into the basis phases, the coupling matrix holds
//! the (resonant-frame) matrix elements of the drive, and the measured
//! observable stays diagonal with the bare level energies. hbar = 1
//! throughout, so energies and inverse times share units.

use num_complex::Complex64 as C64;

use crate::error::{QcError, Result};
use crate::grid::TimeGrid;
use crate::linalg::CMatrix;

/// Hermiticity tolerance for the coupling operator.
pub const COUPLING_HERMITICITY_EPS: f64 = 1e-12;

/// Energy levels plus the operator that drives transitions between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    levels: Vec<f64>,
    coupling: CMatrix,
    /// Interval during which the coupling acts; `None` means always.
    pulse_window: Option<(f64, f64)>,
}

impl SystemSpec {
    pub fn new(levels: Vec<f64>, coupling: CMatrix, pulse_window: Option<(f64, f64)>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(QcError::InvalidSpec("need at least two levels".into()));
        }
        if levels.iter().any(|e| !e.is_finite()) {
            return Err(QcError::InvalidSpec("levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QcError::InvalidSpec("levels must be strictly increasing".into()));
        }
        if coupling.dim() != levels.len() {
            return Err(QcError::ShapeError(format!(
                "coupling dimension {} does not match {} levels",
                coupling.dim(),
                levels.len()
            )));
        }
        let defect = coupling.hermiticity_defect();
        if defect > COUPLING_HERMITICITY_EPS {
            return Err(QcError::InvalidSpec(format!(
                "coupling hermiticity defect {defect} above tolerance"
            )));
        }
        if let Some((on, off)) = pulse_window {
            if !(on.is_finite() && off.is_finite() && off > on) {
                return Err(QcError::InvalidSpec(format!(
                    "pulse window [{on}, {off}] must be a finite interval"
                )));
            }
        }
        Ok(SystemSpec { levels, coupling, pulse_window })
    }

    /// Resonantly driven two-level system with level splitting `delta_e`,
    /// drive amplitude `v0` active inside `pulse_window` and zero outside.
    pub fn two_level(delta_e: f64, v0: f64, pulse_window: (f64, f64)) -> Result<Self> {
        if !(delta_e > 0.0) {
            return Err(QcError::InvalidSpec(format!("level splitting must be positive, got {delta_e}")));
        }
        if v0 < 0.0 {
            return Err(QcError::InvalidSpec(format!("drive amplitude must be nonnegative, got {v0}")));
        }
        let mut v = CMatrix::zeros(2);
        v[(0, 1)] = C64::new(v0, 0.0);
        v[(1, 0)] = C64::new(v0, 0.0);
        SystemSpec::new(vec![-delta_e / 2.0, delta_e / 2.0], v, Some(pulse_window))
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Smallest adjacent level spacing, the characteristic energy scale.
    pub fn level_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }

    pub fn pulse_window(&self) -> Option<(f64, f64)> {
        self.pulse_window
    }

    /// Whether the drive acts at time `t` (left-closed, right-open window).
    pub fn coupling_active(&self, t: f64) -> bool {
        match self.pulse_window {
            Some((on, off)) => t >= on && t < off,
            None => true,
        }
    }

    /// Largest row sum of |V|, a cheap bound on the coupling spectral radius.
    pub fn coupling_norm_bound(&self) -> f64 {
        let n = self.coupling.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.coupling[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Rabi frequency v = |V_12| for a two-level system with off-diagonal drive.
    pub fn rabi_frequency(&self) -> Option<f64> {
        if self.dim() != 2 {
            return None;
        }
        let v = self.coupling[(0, 1)].norm();
        (v > 0.0).then_some(v)
    }

    /// Rabi period pi / v, infinite for an undriven system.
    pub fn rabi_period(&self) -> f64 {
        match self.rabi_frequency() {
            Some(v) => std::f64::consts::PI / v,
            None => f64::INFINITY,
        }
    }

    pub fn is_free(&self) -> bool {
        self.coupling.max_abs() == 0.0
    }
}

/// Continuous-measurement parameters: coupling strength, duration and step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSpec {
    kappa: f64,
    grid: TimeGrid,
    delta_e: f64,
}

impl MeasurementSpec {
    pub fn new(kappa: f64, duration: f64, dt: f64, delta_e: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(QcError::InvalidSpec(format!("kappa must be finite and nonnegative, got {kappa}")));
        }
        if !(delta_e > 0.0) {
            return Err(QcError::InvalidSpec(format!("delta_e must be positive, got {delta_e}")));
        }
        let grid = TimeGrid::from_duration(duration, dt)?;
        let spec = MeasurementSpec { kappa, grid, delta_e };
        // Resolution guard: the step must resolve both the run length and,
        // when the measurement distinguishes levels, the resolution time.
        if dt > duration / 100.0 * (1.0 + 1e-12) {
            return Err(QcError::InvalidSpec(format!(
                "dt={dt} too coarse: must be at most duration/100 = {}",
                duration / 100.0
            )));
        }
        let tlr = spec.level_resolution_time();
        if tlr.is_finite() && dt > tlr / 20.0 * (1.0 + 1e-12) {
            return Err(QcError::InvalidSpec(format!(
                "dt={dt} too coarse: must be at most T_lr/20 = {}",
                tlr / 20.0
            )));
        }
        Ok(spec)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn duration(&self) -> f64 {
        self.grid.duration()
    }

    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Level resolution time T_lr = 1 / (kappa * delta_e^2); infinite when
    /// the measurement is off.
    pub fn level_resolution_time(&self) -> f64 {
        if self.kappa == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (self.kappa * self.delta_e * self.delta_e)
        }
    }

    /// Extra guard used by the propagators: the step must also resolve the
    /// Rabi period of the driven system.
    pub fn check_resolves(&self, sys: &SystemSpec) -> Result<()> {
        let tr = sys.rabi_period();
        if tr.is_finite() && self.dt() > tr / 50.0 * (1.0 + 1e-12) {
            return Err(QcError::InvalidSpec(format!(
                "dt={} too coarse: must be at most T_R/50 = {}",
                self.dt(),
                tr / 50.0
            )));
        }
        Ok(())
    }
}
