//! Norm-preserving stochastic unravelling of the measured dynamics.
//!
//! The state diffuses under
//!
//! ```text
//! d|Psi> = [-i H - (kappa/2) (A - c)^2] |Psi> dt + sqrt(kappa) (A - c) |Psi> dw
//! ```
//!
//! with `A` the measured observable (diagonal level energies), `c = <A>`
//! recomputed every step and `dw` Brownian increments with `dw^2 = dt` (Ito,
//! pre-point). The coefficients are pinned by two requirements: the Ito rule
//! conserves the norm, and the ensemble average of |Psi><Psi| obeys the same
//! master equation (double commutator with coefficient kappa/2) that the
//! readout-average of the conditioned propagator produces. Substituting
//! a(t) = c(t) + xi(t)/sqrt(4 kappa), xi = dw/dt, into the conditioned
//! equation recovers this one, with the Stratonovich-to-Ito correction
//! accounting for the difference in drift.
//!
//! The scheme is Euler-Maruyama followed by an explicit renormalization each
//! step, which makes the trajectory interpretation exact while the
//! pre-renormalization drift stays within the Ito error budget.

use num_complex::Complex64 as C64;

use crate::error::{QcError, Result};
use crate::linalg::{self, CMatrix};
use crate::readout::{sample_noise_path, NoisePath, ReadoutTrajectory};
pub use crate::rng::derive_stream;
use crate::selective::propagate_selective;
use crate::state::QuantumState;
use crate::system::{MeasurementSpec, SystemSpec};

#[derive(Debug, Clone)]
pub struct StochasticRunResult {
    /// Final state, unit norm.
    pub final_state: QuantumState,
    /// c(t) = <Psi| A |Psi> at every grid point.
    pub expectation_history: Vec<f64>,
    /// Populations |C_n|^2 at every grid point (row per grid point).
    pub population_history: Vec<Vec<f64>>,
    /// Normalized states at every grid point, if requested.
    pub state_history: Option<Vec<QuantumState>>,
    /// Squared norm just before each renormalization (one per step).
    pub prerenorm_norm_sq: Vec<f64>,
    /// The noise path that drove the run.
    pub noise: NoisePath,
}

fn expectation_diag(levels: &[f64], psi: &[C64]) -> f64 {
    let n2 = linalg::norm_sq(psi);
    psi.iter()
        .zip(levels)
        .map(|(c, &e)| e * c.norm_sqr())
        .sum::<f64>()
        / n2
}

/// Integrate the stochastic equation over the measurement grid with the given
/// Brownian path. Deterministic for a fixed path.
pub fn propagate_stochastic(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    noise: &NoisePath,
    initial: &QuantumState,
    store_states: bool,
) -> Result<StochasticRunResult> {
    if noise.grid() != meas.grid() {
        return Err(QcError::ShapeError("noise grid does not match the measurement grid".into()));
    }
    if initial.dim() != sys.dim() {
        return Err(QcError::ShapeError("initial state dimension mismatch".into()));
    }
    if (initial.norm_sq() - 1.0).abs() > 1e-9 {
        return Err(QcError::Precondition("initial state must have unit norm".into()));
    }
    meas.check_resolves(sys)?;

    let grid = meas.grid();
    let dt = grid.dt();
    let kappa = meas.kappa();
    let root_k = kappa.sqrt();
    let dim = sys.dim();
    let levels = sys.levels();
    let coupling = sys.coupling();

    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    let mut expectation_history = Vec::with_capacity(grid.n_points());
    let mut population_history = Vec::with_capacity(grid.n_points());
    let mut prerenorm_norm_sq = Vec::with_capacity(grid.n_steps());
    let mut history = store_states.then(|| Vec::with_capacity(grid.n_points()));

    let snapshot = |psi: &[C64],
                    expectations: &mut Vec<f64>,
                    populations: &mut Vec<Vec<f64>>,
                    history: &mut Option<Vec<QuantumState>>|
     -> Result<()> {
        expectations.push(expectation_diag(levels, psi));
        populations.push(psi.iter().map(|c| c.norm_sqr()).collect());
        if let Some(h) = history {
            h.push(QuantumState::new(psi.to_vec())?);
        }
        Ok(())
    };
    snapshot(&psi, &mut expectation_history, &mut population_history, &mut history)?;

    let mut delta = vec![C64::new(0.0, 0.0); dim];
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let c = expectation_diag(levels, &psi);
        let dw = noise.increments()[i];
        let drive_on = !sys.is_free() && sys.coupling_active(t);

        for n in 0..dim {
            let a_minus_c = levels[n] - c;
            let drift = -0.5 * kappa * a_minus_c * a_minus_c * dt + root_k * a_minus_c * dw;
            delta[n] = psi[n] * drift;
            if drive_on {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..dim {
                    acc += coupling[(n, m)] * psi[m];
                }
                delta[n] -= C64::i() * acc * dt;
            }
        }
        for n in 0..dim {
            psi[n] += delta[n];
        }

        let n2 = linalg::norm_sq(&psi);
        if !n2.is_finite() || n2 <= 0.0 {
            return Err(QcError::NumericFailure { step: i, what: format!("bad norm {n2}") });
        }
        prerenorm_norm_sq.push(n2);
        let n = n2.sqrt();
        for cn in psi.iter_mut() {
            *cn /= n;
        }

        snapshot(&psi, &mut expectation_history, &mut population_history, &mut history)?;
    }

    Ok(StochasticRunResult {
        final_state: QuantumState::new(psi)?,
        expectation_history,
        population_history,
        state_history: history,
        prerenorm_norm_sq,
        noise: noise.clone(),
    })
}

/// Report of the equivalence between the stochastic unravelling and the
/// conditioned propagation under the substituted readout
/// a(t) = c(t) + xi(t) / sqrt(4 kappa), xi = dw/dt.
#[derive(Debug, Clone)]
pub struct ChangeOfVariablesReport {
    /// Largest distance between the renormalized conditioned state and the
    /// stochastic state over the grid.
    pub max_state_distance: f64,
    pub final_state_distance: f64,
    /// The readout constructed from the noise path.
    pub readout: ReadoutTrajectory,
    /// Sample variance of the readout deviation from c(t), for comparison
    /// with the per-step instrument variance 1 / (4 kappa dt).
    pub readout_deviation_variance: f64,
}

/// Drive both formalisms with the same Brownian path and compare states at
/// every grid point. For kappa = 0 the two evolutions coincide to integrator
/// accuracy; otherwise the distance shrinks as O(sqrt(dt)).
pub fn verify_change_of_variables(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    initial: &QuantumState,
    seed: u64,
) -> Result<ChangeOfVariablesReport> {
    let noise = sample_noise_path(meas, seed);
    verify_change_of_variables_with(sys, meas, initial, &noise)
}

pub fn verify_change_of_variables_with(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    initial: &QuantumState,
    noise: &NoisePath,
) -> Result<ChangeOfVariablesReport> {
    let grid = meas.grid();
    let dt = grid.dt();
    let kappa = meas.kappa();

    let sse = propagate_stochastic(sys, meas, noise, initial, true)?;
    let sse_states = sse.state_history.as_ref().expect("states were requested");

    // a_i = c_i + dw_i / (sqrt(4 kappa) dt); with kappa = 0 the readout is
    // irrelevant (the measurement term vanishes), use c(t) itself.
    let mut values = Vec::with_capacity(grid.n_points());
    let mut dev_sq = 0.0;
    for i in 0..grid.n_steps() {
        let c = sse.expectation_history[i];
        let dev = if kappa > 0.0 {
            noise.increments()[i] / ((4.0 * kappa).sqrt() * dt)
        } else {
            0.0
        };
        dev_sq += dev * dev;
        values.push(c + dev);
    }
    values.push(*values.last().expect("grid has at least one step"));
    let readout = ReadoutTrajectory::new(grid, values)?;
    let readout_deviation_variance = dev_sq / grid.n_steps() as f64;

    let selective = propagate_selective(sys, meas, &readout, initial, true)?;
    let sel_states = selective.state_history.as_ref().expect("states were requested");

    // Conditioned history states are stored normalized, so they compare
    // directly against the norm-preserving stochastic states.
    let mut max_state_distance = 0.0f64;
    let mut final_state_distance = 0.0f64;
    for (sel, sse_state) in sel_states.iter().zip(sse_states) {
        let d = linalg::distance(sel.amplitudes(), sse_state.amplitudes());
        max_state_distance = max_state_distance.max(d);
        final_state_distance = d;
    }

    Ok(ChangeOfVariablesReport {
        max_state_distance,
        final_state_distance,
        readout,
        readout_deviation_variance,
    })
}

/// Ensemble average of |Psi><Psi| over independent noise seeds, evaluated at
/// the requested grid indices. Returns, per index, the mean density matrix
/// and the elementwise standard error (largest of the real/imaginary part
/// errors per entry).
pub fn ensemble_mean_density(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    initial: &QuantumState,
    n_trajectories: usize,
    master_seed: u64,
    at_indices: &[usize],
) -> Result<Vec<(CMatrix, CMatrix)>> {
    if n_trajectories < 2 {
        return Err(QcError::Precondition("need at least two trajectories".into()));
    }
    let dim = sys.dim();
    let grid = meas.grid();
    for &idx in at_indices {
        if idx >= grid.n_points() {
            return Err(QcError::ShapeError(format!("grid index {idx} out of range")));
        }
    }

    // Per-trajectory projectors at the requested indices.
    let runs: Vec<Result<Vec<CMatrix>>> = crate::exec::run_batch(n_trajectories, |k| {
        let noise = crate::readout::sample_noise_path_on(grid, derive_stream(master_seed, k as u64));
        let run = propagate_stochastic(sys, meas, &noise, initial, true)?;
        let states = run.state_history.as_ref().expect("states were requested");
        Ok(at_indices.iter().map(|&i| states[i].projector()).collect())
    });

    let mut sums = vec![CMatrix::zeros(dim); at_indices.len()];
    let mut sum_sq_re = vec![vec![0.0f64; dim * dim]; at_indices.len()];
    let mut sum_sq_im = vec![vec![0.0f64; dim * dim]; at_indices.len()];
    for run in runs {
        let projectors = run?;
        for (slot, p) in projectors.iter().enumerate() {
            sums[slot].axpy_in_place(C64::new(1.0, 0.0), p);
            for (j, v) in p.data().iter().enumerate() {
                sum_sq_re[slot][j] += v.re * v.re;
                sum_sq_im[slot][j] += v.im * v.im;
            }
        }
    }

    let n = n_trajectories as f64;
    Ok((0..at_indices.len())
        .map(|slot| {
            let mean = sums[slot].scale(C64::new(1.0 / n, 0.0));
            let mut se = CMatrix::zeros(dim);
            for j in 0..dim * dim {
                let m = mean.data()[j];
                let var_re = (sum_sq_re[slot][j] / n - m.re * m.re).max(0.0);
                let var_im = (sum_sq_im[slot][j] / n - m.im * m.im).max(0.0);
                let (r, c) = (j / dim, j % dim);
                se[(r, c)] = C64::new((var_re / n).sqrt(), (var_im / n).sqrt());
            }
            (mean, se)
        })
        .collect())
}
