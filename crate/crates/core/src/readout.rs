//! Measurement readout curves and Brownian noise paths on the shared grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QcError, Result};
use crate::grid::TimeGrid;
use crate::rng;
use crate::system::MeasurementSpec;

/// The curve a(t) delivered by a continuous measurement, sampled on a uniform
/// grid. Values live on grid points; the propagators read the left endpoint
/// of each step, so `values[n_steps]` only matters for plotting and smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutTrajectory {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl ReadoutTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(QcError::ShapeError(format!(
                "readout has {} values but the grid has {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QcError::InvalidSpec("readout values must be finite".into()));
        }
        Ok(ReadoutTrajectory { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_points()])
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value held over step `i`, i.e. on [t_i, t_{i+1}).
    pub fn step_value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Mean of the values over the index range `[from, to]`.
    pub fn mean_over(&self, from: usize, to: usize) -> f64 {
        let slice = &self.values[from..=to];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Discretized Brownian path: independent Gaussian increments with variance
/// dt, one per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn new(grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(QcError::ShapeError(format!(
                "noise path has {} increments but the grid has {} steps",
                increments.len(),
                grid.n_steps()
            )));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(QcError::InvalidSpec("noise increments must be finite".into()));
        }
        Ok(NoisePath { grid, increments })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Coarsen to a grid with twice the step by summing adjacent increments.
    /// Used by strong-convergence checks that refine dt on one Brownian path.
    pub fn coarsen(&self) -> Result<NoisePath> {
        if !self.grid.n_steps().is_multiple_of(2) {
            return Err(QcError::ShapeError("can only coarsen an even number of steps".into()));
        }
        let coarse = TimeGrid::new(2.0 * self.grid.dt(), self.grid.n_steps() / 2)?;
        let increments = self
            .increments
            .chunks_exact(2)
            .map(|pair| pair[0] + pair[1])
            .collect();
        NoisePath::new(coarse, increments)
    }
}

/// Draw a Brownian path on the measurement grid: increments i.i.d. normal
/// with mean zero and variance dt, bit-identical for a fixed seed.
pub fn sample_noise_path(meas: &MeasurementSpec, seed: u64) -> NoisePath {
    sample_noise_path_on(meas.grid(), seed)
}

pub fn sample_noise_path_on(grid: TimeGrid, seed: u64) -> NoisePath {
    let mut rng = rng::run_rng(seed);
    let sd = grid.dt().sqrt();
    let increments = (0..grid.n_steps())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoisePath { grid, increments }
}
