//! Serialization: the JSON run-spec schema and plot-ready CSV exporters.
//!
//! The JSON document carries one system + measurement pair under fixed keys:
//!
//! ```json
//! {
//!   "levels": [-0.5, 0.5],
//!   "couplingRe": [[0.0, 0.5], [0.5, 0.0]],
//!   "couplingIm": [[0.0, 0.0], [0.0, 0.0]],
//!   "pulseWindow": [0.0, 3.14159],
//!   "kappa": 0.5,
//!   "duration": 6.28318,
//!   "dt": 0.0628318,
//!   "seed": 7
//! }
//! ```
//!
//! `pulseWindow` is optional (a missing window means the coupling is always
//! on). Unknown keys are rejected. All CSV exporters write full-precision
//! floats so identical runs produce byte-identical files.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::linalg::CMatrix;
use crate::nonselective::GridDensityMatrix;
use crate::readout::{NoisePath, ReadoutTrajectory};
use crate::selective::SelectiveRunResult;
use crate::stochastic::StochasticRunResult;
use crate::system::{MeasurementSpec, SystemSpec};

/// The flat JSON schema for a (system, measurement, seed) triple.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct RunSpec {
    pub levels: Vec<f64>,
    pub coupling_re: Vec<Vec<f64>>,
    pub coupling_im: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_window: Option<(f64, f64)>,
    pub kappa: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn from_parts(sys: &SystemSpec, meas: &MeasurementSpec, seed: u64) -> Self {
        let n = sys.dim();
        let re = (0..n)
            .map(|i| (0..n).map(|j| sys.coupling()[(i, j)].re).collect())
            .collect();
        let im = (0..n)
            .map(|i| (0..n).map(|j| sys.coupling()[(i, j)].im).collect())
            .collect();
        RunSpec {
            levels: sys.levels().to_vec(),
            coupling_re: re,
            coupling_im: im,
            pulse_window: sys.pulse_window(),
            kappa: meas.kappa(),
            duration: meas.duration(),
            dt: meas.dt(),
            seed,
        }
    }

    /// Validate and build the domain objects.
    pub fn into_parts(&self) -> Result<(SystemSpec, MeasurementSpec)> {
        let n = self.levels.len();
        if self.coupling_re.len() != n
            || self.coupling_im.len() != n
            || self.coupling_re.iter().any(|r| r.len() != n)
            || self.coupling_im.iter().any(|r| r.len() != n)
        {
            return Err(QcError::ShapeError(
                "couplingRe/couplingIm must be square and match levels".into(),
            ));
        }
        let mut coupling = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                coupling[(i, j)] = C64::new(self.coupling_re[i][j], self.coupling_im[i][j]);
            }
        }
        let sys = SystemSpec::new(self.levels.clone(), coupling, self.pulse_window)?;
        let meas = MeasurementSpec::new(self.kappa, self.duration, self.dt, sys.level_gap())?;
        Ok((sys, meas))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| QcError::InvalidSpec(format!("run spec parse error: {e}")))
    }
}

/// Render a float with enough digits to round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    let mut s = format!("{x:?}");
    if s == "-0.0" {
        s = "0.0".into();
    }
    s
}

/// Two-column CSV (time, value) for readout curves.
pub fn readout_csv(readout: &ReadoutTrajectory) -> String {
    let mut out = String::from("time,value\n");
    for (t, v) in readout.grid().times().zip(readout.values()) {
        let _ = writeln!(out, "{},{}", fmt_f64(t), fmt_f64(*v));
    }
    out
}

/// Two-column CSV (time, increment) for noise paths; the time column is the
/// left edge of each step.
pub fn noise_csv(noise: &NoisePath) -> String {
    let mut out = String::from("time,increment\n");
    for (i, dw) in noise.increments().iter().enumerate() {
        let _ = writeln!(out, "{},{}", fmt_f64(noise.grid().time(i)), fmt_f64(*dw));
    }
    out
}

/// Per-point history of a conditioned run: time, amplitudes, norm and the
/// conditional upper-level population.
pub fn selective_history_csv(run: &SelectiveRunResult, dt: f64) -> Result<String> {
    let states = run
        .state_history
        .as_ref()
        .ok_or_else(|| QcError::Precondition("run was made without state history".into()))?;
    let dim = run.final_state.dim();
    let mut out = String::from("time");
    for n in 0..dim {
        let _ = write!(out, ",re_c{},im_c{}", n + 1, n + 1);
    }
    out.push_str(",norm_sq,p2\n");
    for (i, state) in states.iter().enumerate() {
        let _ = write!(out, "{}", fmt_f64(dt * i as f64));
        let scale = (0.5 * run.log_norm_sq_history[i]).exp();
        for c in state.amplitudes() {
            let _ = write!(out, ",{},{}", fmt_f64(c.re * scale), fmt_f64(c.im * scale));
        }
        let _ = writeln!(
            out,
            ",{},{}",
            fmt_f64(run.norm_sq_history[i]),
            fmt_f64(run.p2_history[i])
        );
    }
    Ok(out)
}

/// Per-point history of a stochastic run: time, expectation, populations and
/// the squared norm before each renormalization.
pub fn stochastic_history_csv(run: &StochasticRunResult, dt: f64) -> String {
    let dim = run.final_state.dim();
    let mut out = String::from("time,expectation");
    for n in 0..dim {
        let _ = write!(out, ",p{}", n + 1);
    }
    out.push_str(",prerenorm_norm_sq\n");
    for (i, c) in run.expectation_history.iter().enumerate() {
        let _ = write!(out, "{},{}", fmt_f64(dt * i as f64), fmt_f64(*c));
        for p in &run.population_history[i] {
            let _ = write!(out, ",{}", fmt_f64(*p));
        }
        // one fewer pre-renorm entry than grid points
        let pre = if i == 0 { 1.0 } else { run.prerenorm_norm_sq[i - 1] };
        let _ = writeln!(out, ",{}", fmt_f64(pre));
    }
    out
}

/// Flattened |rho(x, x')| heatmap triples (x, x_prime, magnitude).
pub fn density_heatmap_csv(rho: &GridDensityMatrix) -> String {
    let mut out = String::from("x,x_prime,magnitude\n");
    let n = rho.positions().len();
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(rho.positions()[i]),
                fmt_f64(rho.positions()[j]),
                fmt_f64(rho.entry(i, j).norm())
            );
        }
    }
    out
}

/// A weighted 2-D histogram over (time, value) pairs: one row per time
/// column, one column per value bin. Rows are grid times (decimated to at
/// most `max_time_bins`), the header carries the bin centers.
pub struct DensityDiagram {
    pub time_centers: Vec<f64>,
    pub value_centers: Vec<f64>,
    /// weights[time][bin]
    pub weights: Vec<Vec<f64>>,
}

impl DensityDiagram {
    pub fn new(
        times: &[f64],
        value_range: (f64, f64),
        n_value_bins: usize,
        max_time_bins: usize,
    ) -> Self {
        let stride = (times.len() / max_time_bins.max(1)).max(1);
        let time_centers: Vec<f64> = times.iter().copied().step_by(stride).collect();
        let width = (value_range.1 - value_range.0) / n_value_bins as f64;
        let value_centers =
            (0..n_value_bins).map(|k| value_range.0 + width * (k as f64 + 0.5)).collect();
        DensityDiagram {
            time_centers,
            value_centers,
            weights: vec![vec![0.0; n_value_bins]; times.len().div_ceil(stride)],
        }
    }

    /// Accumulate one trajectory sampled on the same grid as `times`.
    pub fn add_series(&mut self, series: &[f64], weight: f64) {
        let stride = series.len().div_ceil(self.weights.len());
        let lo = self.value_centers[0] - 0.5 * self.bin_width();
        let width = self.bin_width();
        for (row, v) in series.iter().step_by(stride.max(1)).enumerate() {
            if row >= self.weights.len() {
                break;
            }
            let bin = ((v - lo) / width).floor();
            if bin >= 0.0 && (bin as usize) < self.value_centers.len() {
                self.weights[row][bin as usize] += weight;
            }
        }
    }

    fn bin_width(&self) -> f64 {
        if self.value_centers.len() > 1 {
            self.value_centers[1] - self.value_centers[0]
        } else {
            1.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for c in &self.value_centers {
            let _ = write!(out, ",{}", fmt_f64(*c));
        }
        out.push('\n');
        for (row, t) in self.time_centers.iter().enumerate() {
            let _ = write!(out, "{}", fmt_f64(*t));
            for w in &self.weights[row] {
                let _ = write!(out, ",{}", fmt_f64(*w));
            }
            out.push('\n');
        }
        out
    }
}
