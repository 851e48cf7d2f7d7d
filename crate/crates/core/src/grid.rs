//! Uniform time grid shared by states, readouts and noise paths.

use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};

/// Uniform grid t_0 .. t_N with t_i = i * dt. Holds `n_steps` integration
/// steps, i.e. `n_steps + 1` grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(QcError::Precondition(format!("dt must be positive and finite, got {dt}")));
        }
        if n_steps == 0 {
            return Err(QcError::Precondition("grid needs at least one step".into()));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    /// Grid covering `[0, duration]`; `duration` must be an integer number of
    /// steps within a relative tolerance of 1e-6.
    pub fn from_duration(duration: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(QcError::Precondition(format!("dt must be positive and finite, got {dt}")));
        }
        let n = (duration / dt).round();
        if n < 1.0 {
            return Err(QcError::Precondition(format!(
                "duration {duration} shorter than one step dt={dt}"
            )));
        }
        if (n * dt - duration).abs() > dt * 1e-6 {
            return Err(QcError::InvalidSpec(format!(
                "duration {duration} is not an integer number of dt={dt} steps"
            )));
        }
        TimeGrid::new(dt, n as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |i| self.time(i))
    }

    /// Index of the grid point closest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
}
