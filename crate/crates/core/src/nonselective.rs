//! Readout-averaged evolution and decoherence models.
//!
//! Covers the master-equation evolver for the measured system, the reduction
//! of weighted conditioned ensembles to the same density matrix, a toy model
//! of environment-induced superselection, and the coordinate-diffusion
//! equation with its double-commutator dephasing term.

use num_complex::Complex64 as C64;

use crate::ensemble::ReadoutEnsemble;
use crate::error::{QcError, Result};
use crate::linalg::CMatrix;
use crate::selective::propagate_selective;
use crate::state::{DensityMatrix, QuantumState};
use crate::system::{MeasurementSpec, SystemSpec};

/// rho'(t) = -i [V(t), rho] - (kappa/2) [A, [A, rho]] with A the diagonal
/// level observable, in the interaction picture.
fn lindblad_rhs(sys: &SystemSpec, kappa: f64, drive_on: bool, rho: &CMatrix, out: &mut CMatrix) {
    let n = rho.dim();
    let levels = sys.levels();
    for i in 0..n {
        for j in 0..n {
            let gap = levels[i] - levels[j];
            // double commutator of the diagonal observable:
            // [A,[A,rho]]_ij = (E_i - E_j)^2 rho_ij
            out[(i, j)] = rho[(i, j)] * (-0.5 * kappa * gap * gap);
        }
    }
    if drive_on {
        let comm = sys.coupling().commutator(rho);
        out.axpy_in_place(-C64::i(), &comm);
    }
}

/// Density-matrix trajectory on the measurement grid.
#[derive(Debug, Clone)]
pub struct LindbladRun {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl LindbladRun {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("run contains at least the initial state")
    }

    pub fn at_index(&self, i: usize) -> &DensityMatrix {
        &self.states[i]
    }
}

/// Integrate the master equation over the measurement grid with RK4,
/// recording the state at every grid point.
pub fn propagate_lindblad(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    initial: &DensityMatrix,
) -> Result<LindbladRun> {
    if initial.dim() != sys.dim() {
        return Err(QcError::ShapeError("initial density matrix dimension mismatch".into()));
    }
    meas.check_resolves(sys)?;
    let grid = meas.grid();
    let dt = grid.dt();
    let kappa = meas.kappa();
    let n = sys.dim();

    let mut rho = initial.elements().clone();
    let mut times = Vec::with_capacity(grid.n_points());
    let mut states = Vec::with_capacity(grid.n_points());
    times.push(0.0);
    states.push(initial.clone());

    let mut k1 = CMatrix::zeros(n);
    let mut k2 = CMatrix::zeros(n);
    let mut k3 = CMatrix::zeros(n);
    let mut k4 = CMatrix::zeros(n);

    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let drive_on = !sys.is_free() && sys.coupling_active(t);
        lindblad_rhs(sys, kappa, drive_on, &rho, &mut k1);
        let mut stage = rho.clone();
        stage.axpy_in_place(C64::new(0.5 * dt, 0.0), &k1);
        lindblad_rhs(sys, kappa, drive_on, &stage, &mut k2);
        stage = rho.clone();
        stage.axpy_in_place(C64::new(0.5 * dt, 0.0), &k2);
        lindblad_rhs(sys, kappa, drive_on, &stage, &mut k3);
        stage = rho.clone();
        stage.axpy_in_place(C64::new(dt, 0.0), &k3);
        lindblad_rhs(sys, kappa, drive_on, &stage, &mut k4);

        rho.axpy_in_place(C64::new(dt / 6.0, 0.0), &k1);
        rho.axpy_in_place(C64::new(dt / 3.0, 0.0), &k2);
        rho.axpy_in_place(C64::new(dt / 3.0, 0.0), &k3);
        rho.axpy_in_place(C64::new(dt / 6.0, 0.0), &k4);

        if rho.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(QcError::NumericFailure {
                step: i,
                what: "non-finite density matrix".into(),
            });
        }
        times.push(grid.time(i + 1));
        states.push(DensityMatrix::new(rho.clone()).map_err(|e| QcError::NumericFailure {
            step: i,
            what: format!("state left the physical set: {e}"),
        })?);
    }

    Ok(LindbladRun { times, states })
}

/// Elementwise comparison of the importance-weighted conditioned ensemble
/// against the master-equation evolution.
#[derive(Debug, Clone)]
pub struct EnsembleAverageReport {
    /// Grid indices at which the comparison was made.
    pub indices: Vec<usize>,
    /// Weighted ensemble estimate at each index.
    pub averaged: Vec<CMatrix>,
    /// Master-equation state at each index.
    pub lindblad: Vec<CMatrix>,
    /// Largest elementwise |difference| per index.
    pub max_deviation: Vec<f64>,
    /// Largest elementwise standard error per index.
    pub max_standard_error: Vec<f64>,
    /// Largest deviation measured in standard errors, across all indices
    /// and entries.
    pub worst_sigma: f64,
}

/// Average the weighted conditioned trajectories into density matrices and
/// compare with the master equation at the given grid indices.
pub fn average_selective_to_lindblad(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    ensemble: &ReadoutEnsemble,
    initial: &QuantumState,
    indices: &[usize],
) -> Result<EnsembleAverageReport> {
    if ensemble.is_empty() {
        return Err(QcError::InvalidMeasure("empty ensemble".into()));
    }
    ensemble.check_normalized_measure()?;
    let dim = sys.dim();
    let grid = meas.grid();
    for &i in indices {
        if i >= grid.n_points() {
            return Err(QcError::ShapeError(format!("grid index {i} out of range")));
        }
    }

    let weights = ensemble.normalized_weights();
    let nn = dim * dim;
    // Self-normalized estimator: mean = sum w~ v; its standard error per
    // entry part is sqrt(sum w~^2 (v - mean)^2), accumulated via raw moments.
    let mut sum_wv = vec![CMatrix::zeros(dim); indices.len()];
    let mut sum_w2v = vec![vec![C64::new(0.0, 0.0); nn]; indices.len()];
    let mut sum_w2v2 = vec![vec![C64::new(0.0, 0.0); nn]; indices.len()];
    let mut sum_w2 = 0.0f64;

    for (sample, &w) in ensemble.samples().iter().zip(&weights) {
        sum_w2 += w * w;
        let run = propagate_selective(sys, meas, &sample.readout, initial, true)?;
        let states = run.state_history.as_ref().expect("states were requested");
        for (slot, &idx) in indices.iter().enumerate() {
            let proj = states[idx].projector();
            sum_wv[slot].axpy_in_place(C64::new(w, 0.0), &proj);
            for (j, v) in proj.data().iter().enumerate() {
                sum_w2v[slot][j] += v * (w * w);
                sum_w2v2[slot][j] += C64::new(v.re * v.re, v.im * v.im) * (w * w);
            }
        }
    }

    let lindblad_run = propagate_lindblad(sys, meas, &DensityMatrix::from_pure(initial)?)?;

    let mut averaged = Vec::with_capacity(indices.len());
    let mut lindblad = Vec::with_capacity(indices.len());
    let mut max_deviation = Vec::with_capacity(indices.len());
    let mut max_standard_error = Vec::with_capacity(indices.len());
    let mut worst_sigma = 0.0f64;
    for (slot, &idx) in indices.iter().enumerate() {
        let mean = sum_wv[slot].clone();
        let reference = lindblad_run.at_index(idx).elements().clone();
        let mut dev = 0.0f64;
        let mut max_se = 0.0f64;
        for j in 0..nn {
            let m = mean.data()[j];
            let diff = m - reference.data()[j];
            let var_re =
                (sum_w2v2[slot][j].re - 2.0 * m.re * sum_w2v[slot][j].re + m.re * m.re * sum_w2)
                    .max(0.0);
            let var_im =
                (sum_w2v2[slot][j].im - 2.0 * m.im * sum_w2v[slot][j].im + m.im * m.im * sum_w2)
                    .max(0.0);
            let (se_re, se_im) = (var_re.sqrt(), var_im.sqrt());
            dev = dev.max(diff.re.abs().max(diff.im.abs()));
            max_se = max_se.max(se_re.max(se_im));
            let sigma =
                (diff.re.abs() / se_re.max(1e-12)).max(diff.im.abs() / se_im.max(1e-12));
            worst_sigma = worst_sigma.max(sigma);
        }
        averaged.push(mean);
        lindblad.push(reference);
        max_deviation.push(dev);
        max_standard_error.push(max_se);
    }

    Ok(EnsembleAverageReport {
        indices: indices.to_vec(),
        averaged,
        lindblad,
        max_deviation,
        max_standard_error,
        worst_sigma,
    })
}

/// Toy environment: `n_bits` two-state subsystems, each rotated by `theta`
/// conditioned on the system being in its upper state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentModel {
    n_bits: u32,
    theta: f64,
}

impl EnvironmentModel {
    pub fn new(n_bits: u32, theta: f64) -> Result<Self> {
        if n_bits < 1 {
            return Err(QcError::InvalidSpec("need at least one environment bit".into()));
        }
        if !(theta > 0.0 && theta <= std::f64::consts::FRAC_PI_2) {
            return Err(QcError::InvalidSpec(format!("coupling angle {theta} outside (0, pi/2]")));
        }
        Ok(EnvironmentModel { n_bits, theta })
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

#[derive(Debug, Clone)]
pub struct SuperselectionReport {
    /// Reduced system density matrix after tracing out the environment.
    pub reduced: DensityMatrix,
    /// Overlap of the two conditional environment states, accumulated as a
    /// product of per-bit overlaps.
    pub pointer_overlap: f64,
    /// cos^n(theta), the same overlap in closed form.
    pub predicted_overlap: f64,
    /// |reduced off-diagonal| / |initial off-diagonal|; a zero initial
    /// off-diagonal reports 1 (nothing to suppress).
    pub suppression: f64,
}

/// Entangle a two-level superposition with the environment bits and trace
/// them out. Each bit starts in |0>; conditioned on the system's upper state
/// it rotates by `theta`, so the two conditional environment states are
/// product states whose overlap is cos(theta) per bit.
pub fn superselection_toy(
    model: &EnvironmentModel,
    initial: (C64, C64),
) -> Result<SuperselectionReport> {
    let (c1, c2) = initial;
    let norm = (c1.norm_sqr() + c2.norm_sqr()).sqrt();
    if !(norm > 0.0) || (norm - 1.0).abs() > 1e-9 {
        return Err(QcError::Precondition("initial superposition must be normalized".into()));
    }

    // The joint state is c1 |1>|b'>^n + c2 |2>|b''>^n with per-bit states
    // |b'> = |0> and |b''> = cos(theta)|0> + sin(theta)|1>; tracing the bits
    // multiplies the off-diagonal by <b'|b''> once per bit.
    let bit_prime = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let bit_second = [C64::new(model.theta.cos(), 0.0), C64::new(model.theta.sin(), 0.0)];
    let per_bit = crate::linalg::inner(&bit_prime, &bit_second).re;
    let mut pointer_overlap = 1.0f64;
    for _ in 0..model.n_bits {
        pointer_overlap *= per_bit;
    }
    let predicted_overlap = model.theta.cos().powi(model.n_bits as i32);

    let mut rho = CMatrix::zeros(2);
    rho[(0, 0)] = C64::new(c1.norm_sqr(), 0.0);
    rho[(1, 1)] = C64::new(c2.norm_sqr(), 0.0);
    rho[(0, 1)] = c1 * c2.conj() * pointer_overlap;
    rho[(1, 0)] = c2 * c1.conj() * pointer_overlap;
    let reduced = DensityMatrix::new(rho)?;

    let initial_off = (c1 * c2.conj()).norm();
    let suppression =
        if initial_off > 0.0 { reduced.entry(0, 1).norm() / initial_off } else { 1.0 };

    Ok(SuperselectionReport { reduced, pointer_overlap, predicted_overlap, suppression })
}

/// Density matrix rho(x, x') on a uniform one-dimensional position grid.
#[derive(Debug, Clone)]
pub struct GridDensityMatrix {
    positions: Vec<f64>,
    elements: CMatrix,
}

impl GridDensityMatrix {
    pub fn new(positions: Vec<f64>, elements: CMatrix) -> Result<Self> {
        if positions.len() < 2 {
            return Err(QcError::InvalidSpec("grid needs at least two points".into()));
        }
        if elements.dim() != positions.len() {
            return Err(QcError::ShapeError("matrix dimension does not match the grid".into()));
        }
        let dx = positions[1] - positions[0];
        if !(dx > 0.0) {
            return Err(QcError::InvalidSpec("grid must be increasing".into()));
        }
        if positions.windows(2).any(|w| ((w[1] - w[0]) - dx).abs() > 1e-9 * dx) {
            return Err(QcError::InvalidSpec("grid must be uniform".into()));
        }
        let h = elements.hermiticity_defect();
        if h > 1e-10 {
            return Err(QcError::InvalidSpec(format!("hermiticity defect {h}")));
        }
        let trace = elements.trace().re * dx;
        if !(-1e-9..=1.0 + 1e-9).contains(&trace) {
            return Err(QcError::InvalidSpec(format!("grid-weighted trace {trace} outside [0, 1]")));
        }
        Ok(GridDensityMatrix { positions, elements })
    }

    /// Uniform grid of `n` points spanning [lo, hi].
    pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let dx = (hi - lo) / (n as f64 - 1.0);
        (0..n).map(|i| lo + dx * i as f64).collect()
    }

    /// Pure state |psi><psi| from grid samples, normalized so the
    /// grid-weighted trace is one.
    pub fn from_wavefunction(positions: Vec<f64>, psi: &[C64]) -> Result<Self> {
        if psi.len() != positions.len() {
            return Err(QcError::ShapeError("wavefunction length does not match grid".into()));
        }
        let dx = positions[1] - positions[0];
        let norm_sq: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx;
        if norm_sq <= 0.0 {
            return Err(QcError::Precondition("wavefunction must be nonzero".into()));
        }
        let scaled: Vec<C64> = psi.iter().map(|c| c / norm_sq.sqrt()).collect();
        let elements = CMatrix::outer(&scaled, &scaled);
        Self::new(positions, elements)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn dx(&self) -> f64 {
        self.positions[1] - self.positions[0]
    }

    pub fn grid_trace(&self) -> f64 {
        self.elements.trace().re * self.dx()
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.elements[(i, j)]
    }
}

/// Evolve the grid density matrix under
/// rho' = -i [H, rho] - (kappa/2) [x, [x, rho]], with H the free-particle
/// kinetic term for `mass` (second-difference Laplacian, hard walls) or
/// absent for `mass = None`. Returns `n_saves` evenly spaced snapshots
/// ending at `duration`.
pub fn propagate_diffusion(
    initial: &GridDensityMatrix,
    kappa: f64,
    mass: Option<f64>,
    duration: f64,
    n_saves: usize,
) -> Result<Vec<(f64, GridDensityMatrix)>> {
    if kappa < 0.0 {
        return Err(QcError::InvalidSpec("kappa must be nonnegative".into()));
    }
    if let Some(m) = mass {
        if !(m > 0.0) {
            return Err(QcError::InvalidSpec("mass must be positive".into()));
        }
    }
    if !(duration > 0.0) || n_saves == 0 {
        return Err(QcError::Precondition("need positive duration and at least one save".into()));
    }

    let n = initial.positions().len();
    let dx = initial.dx();
    let span = initial.positions()[n - 1] - initial.positions()[0];

    // Spectral bound of the generator: kinetic commutator plus diagonal
    // decay. Explicit RK4 needs |lambda| dt inside its stability region.
    let kinetic_scale = mass.map_or(0.0, |m| 2.0 / (m * dx * dx));
    let decay_scale = 0.5 * kappa * span * span;
    let stiffness = 2.0 * kinetic_scale + decay_scale;
    let dt_stable = if stiffness > 0.0 { 2.0 / stiffness } else { duration };
    let n_steps = ((duration / dt_stable).ceil() as usize).max(n_saves * 8).max(64);
    if n_steps > 2_000_000 {
        return Err(QcError::ResolutionError(format!(
            "grid too fine or too coarse for the requested dynamics: {n_steps} steps needed"
        )));
    }
    // round up so saves land on steps
    let n_steps = n_steps.div_ceil(n_saves) * n_saves;
    let dt = duration / n_steps as f64;

    let positions = initial.positions().to_vec();
    let inv_2m_dx2 = mass.map(|m| 1.0 / (2.0 * m * dx * dx));

    let rhs = |rho: &CMatrix, out: &mut CMatrix| {
        for i in 0..n {
            for j in 0..n {
                let d = positions[i] - positions[j];
                out[(i, j)] = rho[(i, j)] * (-0.5 * kappa * d * d);
            }
        }
        if let Some(f) = inv_2m_dx2 {
            // -i [H, rho] with H = -laplacian/(2m): second differences along
            // rows minus along columns.
            for i in 0..n {
                for j in 0..n {
                    let lap_row = second_difference(rho, i, j, n, true);
                    let lap_col = second_difference(rho, i, j, n, false);
                    out[(i, j)] += C64::i() * f * (lap_row - lap_col);
                }
            }
        }
    };

    let mut rho = initial.elements().clone();
    let mut k1 = CMatrix::zeros(n);
    let mut k2 = CMatrix::zeros(n);
    let mut k3 = CMatrix::zeros(n);
    let mut k4 = CMatrix::zeros(n);
    let save_every = n_steps / n_saves;
    let mut out = Vec::with_capacity(n_saves);

    for step in 0..n_steps {
        rhs(&rho, &mut k1);
        let mut stage = rho.clone();
        stage.axpy_in_place(C64::new(0.5 * dt, 0.0), &k1);
        rhs(&stage, &mut k2);
        stage = rho.clone();
        stage.axpy_in_place(C64::new(0.5 * dt, 0.0), &k2);
        rhs(&stage, &mut k3);
        stage = rho.clone();
        stage.axpy_in_place(C64::new(dt, 0.0), &k3);
        rhs(&stage, &mut k4);
        rho.axpy_in_place(C64::new(dt / 6.0, 0.0), &k1);
        rho.axpy_in_place(C64::new(dt / 3.0, 0.0), &k2);
        rho.axpy_in_place(C64::new(dt / 3.0, 0.0), &k3);
        rho.axpy_in_place(C64::new(dt / 6.0, 0.0), &k4);
        if rho.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(QcError::NumericFailure { step, what: "non-finite grid density".into() });
        }
        if (step + 1) % save_every == 0 {
            let t = dt * (step + 1) as f64;
            out.push((t, GridDensityMatrix::new(positions.clone(), rho.clone())?));
        }
    }
    Ok(out)
}

/// Second difference of rho along the row (i) or column (j) index with
/// hard-wall boundaries.
fn second_difference(rho: &CMatrix, i: usize, j: usize, n: usize, along_row: bool) -> C64 {
    let zero = C64::new(0.0, 0.0);
    let center = rho[(i, j)];
    let (prev, next) = if along_row {
        (
            if i > 0 { rho[(i - 1, j)] } else { zero },
            if i + 1 < n { rho[(i + 1, j)] } else { zero },
        )
    } else {
        (
            if j > 0 { rho[(i, j - 1)] } else { zero },
            if j + 1 < n { rho[(i, j + 1)] } else { zero },
        )
    };
    prev - center * 2.0 + next
}

/// Measurement strength from linear dissipation at temperature T:
/// kappa = 2 eta k T / hbar^2 with hbar = k = 1.
pub fn kappa_from_caldeira_leggett(eta: f64, temperature: f64) -> Result<f64> {
    if !(eta > 0.0) || !(temperature > 0.0) {
        return Err(QcError::InvalidSpec("eta and temperature must be positive".into()));
    }
    Ok(2.0 * eta * temperature)
}

/// Measurement strength from soft scattering with reaction distance lambda
/// and relaxation time tau: kappa = 2 / (lambda^2 tau).
pub fn kappa_from_soft_scattering(lambda: f64, tau: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(tau > 0.0) {
        return Err(QcError::InvalidSpec("lambda and tau must be positive".into()));
    }
    Ok(2.0 / (lambda * lambda * tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_level(v0: f64, window_end: f64) -> SystemSpec {
        SystemSpec::two_level(1.0, v0, (0.0, window_end)).unwrap()
    }

    #[test]
    fn dephasing_closed_form() {
        // Free system: off-diagonal decays at kappa dE^2 / 2, diagonals frozen.
        let sys = two_level(0.0, PI);
        let kappa = 1.0;
        let meas = MeasurementSpec::new(kappa, 2.0, 2e-3, 1.0).unwrap();
        let initial =
            DensityMatrix::from_pure(&QuantumState::two_level_superposition(0.3).unwrap()).unwrap();
        let run = propagate_lindblad(&sys, &meas, &initial).unwrap();
        let out = run.final_state();
        assert!((out.entry(0, 0).re - 0.3).abs() < 1e-10);
        assert!((out.entry(1, 1).re - 0.7).abs() < 1e-10);
        let expected = initial.entry(0, 1).re * (-0.5 * kappa * 1.0 * 2.0).exp();
        assert!(
            (out.entry(0, 1).re - expected).abs() < 1e-9,
            "off-diagonal {} vs {expected}",
            out.entry(0, 1).re
        );
    }

    #[test]
    fn ensemble_average_trivial_without_measurement() {
        // kappa = 0: every readout leaves the same unitary state, so the
        // weighted average equals the master-equation state exactly.
        let sys = two_level(0.5, PI);
        let meas = MeasurementSpec::new(0.0, PI, PI / 200.0, 1.0).unwrap();
        let init = QuantumState::basis_state(2, 0).unwrap();
        let ens = crate::ensemble::sample_readouts(
            &sys,
            &meas,
            32,
            3,
            &init,
            crate::ensemble::Proposal::Instrument,
        )
        .unwrap();
        let idx = [meas.grid().n_points() - 1];
        let report = average_selective_to_lindblad(&sys, &meas, &ens, &init, &idx).unwrap();
        assert!(report.max_deviation[0] < 1e-8, "deviation {}", report.max_deviation[0]);
    }

    #[test]
    fn ensemble_average_reproduces_dephasing_rate() {
        // V = 0, superposition start: diagonals frozen, off-diagonal decays
        // at kappa dE^2 / 2; the weighted ensemble must reproduce the rate.
        let sys = two_level(0.0, PI);
        let kappa = 1.0;
        let t_total = 2.0;
        let meas = MeasurementSpec::new(kappa, t_total, 4e-3, 1.0).unwrap();
        let init = QuantumState::two_level_superposition(0.5).unwrap();
        let ens = crate::ensemble::sample_readouts(
            &sys,
            &meas,
            4000,
            9,
            &init,
            crate::ensemble::Proposal::Instrument,
        )
        .unwrap();
        let idx = [meas.grid().n_points() - 1];
        let report = average_selective_to_lindblad(&sys, &meas, &ens, &init, &idx).unwrap();
        let averaged = &report.averaged[0];
        // diagonals match the initial populations tightly
        assert!((averaged[(0, 0)].re - 0.5).abs() < 0.02);
        // measured decay rate of the off-diagonal within 10% of kappa dE^2/2
        let measured_rate = -(averaged[(0, 1)].norm() / 0.5).ln() / t_total;
        let expected = 0.5 * kappa;
        assert!(
            (measured_rate - expected).abs() / expected < 0.1,
            "rate {measured_rate} vs {expected}"
        );
    }

    #[test]
    fn unitary_case_preserves_purity() {
        let sys = two_level(0.5, PI);
        let meas = MeasurementSpec::new(0.0, PI, PI / 500.0, 1.0).unwrap();
        let initial = DensityMatrix::from_pure(&QuantumState::basis_state(2, 0).unwrap()).unwrap();
        let run = propagate_lindblad(&sys, &meas, &initial).unwrap();
        for state in &run.states {
            assert!((state.purity() - 1.0).abs() < 1e-9);
            assert!((state.trace() - 1.0).abs() < 1e-9);
        }
        // the pi pulse moved all population up
        assert!((run.final_state().entry(1, 1).re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trace_conserved_and_purity_monotone() {
        let sys = two_level(0.5, PI);
        let meas = MeasurementSpec::new(1.0, PI, PI / 1000.0, 1.0).unwrap();
        let initial = DensityMatrix::from_pure(&QuantumState::basis_state(2, 0).unwrap()).unwrap();
        let run = propagate_lindblad(&sys, &meas, &initial).unwrap();
        let mut prev_purity = f64::INFINITY;
        for state in &run.states {
            assert!((state.trace() - 1.0).abs() < 1e-9);
            let p = state.purity();
            assert!(p <= prev_purity + 1e-9, "purity increased: {p} > {prev_purity}");
            assert!(state.elements().eigenvalues_hermitian()[0] >= -1e-8);
            prev_purity = p;
        }
    }

    #[test]
    fn superselection_single_orthogonal_bit_kills_coherence() {
        let model = EnvironmentModel::new(1, std::f64::consts::FRAC_PI_2).unwrap();
        let c = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let report = superselection_toy(&model, (c, c)).unwrap();
        assert!(report.pointer_overlap.abs() < 1e-16);
        assert!(report.reduced.entry(0, 1).norm() < 1e-15);
    }

    #[test]
    fn superselection_weak_bit_leaves_state_nearly_pure() {
        let model = EnvironmentModel::new(1, 1e-8).unwrap();
        let c = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let report = superselection_toy(&model, (c, c)).unwrap();
        assert!((report.suppression - 1.0).abs() < 1e-12);
        assert!((report.reduced.purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn superselection_product_matches_closed_form() {
        for (n_bits, theta) in [(100u32, 0.1f64), (1000, 0.05), (37, 0.7)] {
            let model = EnvironmentModel::new(n_bits, theta).unwrap();
            let report =
                superselection_toy(&model, (C64::new(0.6, 0.0), C64::new(0.0, 0.8))).unwrap();
            let rel = (report.pointer_overlap - report.predicted_overlap).abs()
                / report.predicted_overlap.abs().max(1e-300);
            assert!(rel < 1e-10, "n={n_bits} theta={theta} rel={rel}");
            assert!((report.suppression - report.predicted_overlap.abs()).abs() < 1e-10);
        }
        // cos^100(0.1) is about 0.606
        let model = EnvironmentModel::new(100, 0.1).unwrap();
        let report = superselection_toy(&model, (C64::new(0.6, 0.0), C64::new(0.8, 0.0))).unwrap();
        assert!((report.pointer_overlap - 0.6058).abs() < 1e-3);
    }

    #[test]
    fn environment_model_validation() {
        assert!(EnvironmentModel::new(0, 0.5).is_err());
        assert!(EnvironmentModel::new(3, 0.0).is_err());
        assert!(EnvironmentModel::new(3, 2.0).is_err());
    }

    fn two_delta_state(n: usize, sep_cells: usize) -> GridDensityMatrix {
        let positions = GridDensityMatrix::uniform_grid(-8.0, 8.0, n);
        let mid = n / 2;
        let mut psi = vec![C64::new(0.0, 0.0); n];
        psi[mid - sep_cells] = C64::new(1.0, 0.0);
        psi[mid + sep_cells] = C64::new(1.0, 0.0);
        GridDensityMatrix::from_wavefunction(positions, &psi).unwrap()
    }

    #[test]
    fn diffusion_decay_matches_closed_form() {
        let n = 64;
        let rho0 = two_delta_state(n, 8);
        let mid = n / 2;
        let (i, j) = (mid + 8, mid - 8);
        let x_i = rho0.positions()[i];
        let x_j = rho0.positions()[j];
        let kappa = 1.0;
        let t = 0.05;
        let snaps = propagate_diffusion(&rho0, kappa, None, t, 1).unwrap();
        let out = &snaps[0].1;
        let expected_sq = rho0.entry(i, j).norm_sqr() * (-kappa * (x_i - x_j).powi(2) * t).exp();
        let got_sq = out.entry(i, j).norm_sqr();
        let rel = (got_sq - expected_sq).abs() / expected_sq;
        assert!(rel < 1e-8, "relative {rel}");
        // diagonals untouched
        assert!((out.entry(i, i).re - rho0.entry(i, i).re).abs() < 1e-9);
    }

    #[test]
    fn diffusion_kappa_zero_is_constant_without_hamiltonian() {
        let rho0 = two_delta_state(64, 6);
        let snaps = propagate_diffusion(&rho0, 0.0, None, 1.0, 1).unwrap();
        let out = &snaps[0].1;
        let dev = out.elements().sub(rho0.elements()).max_abs();
        assert!(dev < 1e-12);
    }

    #[test]
    fn diffusion_rate_regression_and_separation_scaling() {
        // A broad wavepacket populates every off-diagonal; each one's |rho|^2
        // decay rate must fit kappa (x - x')^2 within 1%, which makes the
        // decoherence time scale as separation^-2.
        let n = 64;
        let kappa = 1.0;
        let positions = GridDensityMatrix::uniform_grid(-8.0, 8.0, n);
        let psi: Vec<C64> = positions
            .iter()
            .map(|&x| C64::new((-x * x / 8.0).exp(), 0.0))
            .collect();
        let rho0 = GridDensityMatrix::from_wavefunction(positions, &psi).unwrap();
        let snaps = propagate_diffusion(&rho0, kappa, None, 0.02, 8).unwrap();
        let mid = n / 2;
        let mut fitted = Vec::new();
        for sep in [4usize, 6, 10] {
            let (i, j) = (mid + sep, mid - sep);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (t, rho) in &snaps {
                let v = rho.entry(i, j).norm_sqr();
                xs.push(*t);
                ys.push(v.ln());
            }
            let nn = xs.len() as f64;
            let xm = xs.iter().sum::<f64>() / nn;
            let ym = ys.iter().sum::<f64>() / nn;
            let slope: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
                / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
            let dx_sep = rho0.positions()[i] - rho0.positions()[j];
            let expected = -kappa * dx_sep * dx_sep;
            let rel = (slope - expected).abs() / expected.abs();
            assert!(rel < 0.01, "sep {sep}: slope {slope} vs {expected}");
            fitted.push((dx_sep, -slope));
        }
        // decoherence time ~ separation^p with p = -2 within 0.1
        let (d1, r1) = fitted[0];
        let (d2, r2) = fitted[2];
        let power = ((1.0 / r2) / (1.0 / r1)).ln() / (d2 / d1).ln();
        assert!((power + 2.0).abs() < 0.1, "power {power}");
    }

    #[test]
    fn diffusion_with_kinetic_term_keeps_trace() {
        let rho0 = two_delta_state(64, 6);
        let snaps = propagate_diffusion(&rho0, 0.5, Some(5.0), 0.2, 4).unwrap();
        for (_, rho) in &snaps {
            assert!((rho.grid_trace() - 1.0).abs() < 1e-6);
            assert!(rho.elements().hermiticity_defect() < 1e-8);
        }
    }

    #[test]
    fn kappa_helper_formulas() {
        assert!((kappa_from_caldeira_leggett(1.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((kappa_from_caldeira_leggett(2.0, 3.0).unwrap() - 12.0).abs() < 1e-15);
        let k1 = kappa_from_caldeira_leggett(1.0, 1.0).unwrap();
        let k2 = kappa_from_caldeira_leggett(1.0, 2.0).unwrap();
        assert!((k2 / k1 - 2.0).abs() < 1e-15);
        assert!(kappa_from_caldeira_leggett(-1.0, 1.0).is_err());

        assert!((kappa_from_soft_scattering(1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((kappa_from_soft_scattering(2.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(kappa_from_soft_scattering(1e9, 1.0).unwrap() < 1e-17);
        assert!(kappa_from_soft_scattering(0.0, 1.0).is_err());
    }
}
