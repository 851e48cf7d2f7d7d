//! Conditioned (selective) evolution under a given measurement readout.
//!
//! The state is propagated by the Schroedinger equation with an effective
//! non-Hermitian generator: in the interaction-picture energy basis the
//! coefficients obey
//!
//! ```text
//! dC_n/dt = -kappa (E_n - E(t))^2 C_n - i sum_m V_nm C_m
//! ```
//!
//! The norm is never restored during propagation: the squared norm at the
//! final time is the probability density of the readout that produced it.

use num_complex::Complex64 as C64;

use crate::error::{QcError, Result};
use crate::linalg;
use crate::readout::ReadoutTrajectory;
use crate::state::QuantumState;
use crate::system::{MeasurementSpec, SystemSpec};

/// Target for |lambda| * h per Runge-Kutta substep; steps whose measurement
/// term is stiffer than this are subcycled so the scheme stays in its
/// stability region even for readout values far from the spectrum.
const SUBSTEP_BUDGET: f64 = 0.02;

/// Absolute tolerance for the per-step norm monotonicity guard.
const NORM_GUARD_EPS: f64 = 1e-12;

/// When the running squared norm drops below this, amplitudes are rescaled
/// and the factor is tracked in log space to avoid underflow.
const RESCALE_FLOOR: f64 = 1e-250;

/// Hard cap on subcycling; a step needing more than this is dominated by a
/// readout value so extreme the result would be an exact zero anyway.
const MAX_SUBSTEPS: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct SelectiveRunResult {
    /// State at the final time, unnormalized.
    pub final_state: QuantumState,
    /// Squared norm of the final state: the readout probability density with
    /// respect to the per-step instrument measure. May underflow to zero for
    /// very stiff runs; `log_norm_squared` is always exact.
    pub norm_squared: f64,
    pub log_norm_squared: f64,
    /// Normalized states at every grid point, if requested. The physical
    /// (shrinking) state at index i is the stored state scaled by
    /// exp(log_norm_sq_history[i] / 2).
    pub state_history: Option<Vec<QuantumState>>,
    /// Conditional upper-level population |C_2|^2 / sum |C_n|^2 per grid point.
    pub p2_history: Vec<f64>,
    /// Squared norm per grid point (linear scale; may underflow like
    /// `norm_squared`).
    pub norm_sq_history: Vec<f64>,
    /// Log of the squared norm per grid point; exact even where the linear
    /// value underflows.
    pub log_norm_sq_history: Vec<f64>,
}

struct Workspace {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); dim];
        Workspace { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }
}

/// dC/dt for a frozen readout value and drive on/off flag.
fn derivative(
    sys: &SystemSpec,
    kappa: f64,
    readout_value: f64,
    drive_on: bool,
    psi: &[C64],
    out: &mut [C64],
) {
    let levels = sys.levels();
    for n in 0..psi.len() {
        let d = levels[n] - readout_value;
        out[n] = psi[n] * (-kappa * d * d);
    }
    if drive_on {
        let v = sys.coupling();
        for n in 0..psi.len() {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..psi.len() {
                acc += v[(n, m)] * psi[m];
            }
            out[n] -= C64::i() * acc;
        }
    }
}

fn rk4_substep(
    sys: &SystemSpec,
    kappa: f64,
    readout_value: f64,
    drive_on: bool,
    psi: &mut [C64],
    h: f64,
    ws: &mut Workspace,
) {
    derivative(sys, kappa, readout_value, drive_on, psi, &mut ws.k1);
    for (t, (p, k)) in ws.tmp.iter_mut().zip(psi.iter().zip(&ws.k1)) {
        *t = p + k * (0.5 * h);
    }
    derivative(sys, kappa, readout_value, drive_on, &ws.tmp, &mut ws.k2);
    for (t, (p, k)) in ws.tmp.iter_mut().zip(psi.iter().zip(&ws.k2)) {
        *t = p + k * (0.5 * h);
    }
    derivative(sys, kappa, readout_value, drive_on, &ws.tmp, &mut ws.k3);
    for (t, (p, k)) in ws.tmp.iter_mut().zip(psi.iter().zip(&ws.k3)) {
        *t = p + k * h;
    }
    derivative(sys, kappa, readout_value, drive_on, &ws.tmp, &mut ws.k4);
    for (p, (((k1, k2), k3), k4)) in psi
        .iter_mut()
        .zip(ws.k1.iter().zip(&ws.k2).zip(&ws.k3).zip(&ws.k4))
    {
        *p += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
}

/// Propagate `initial` (unit norm) over the measurement grid conditioned on
/// `readout`. The readout is held constant over each step (left endpoint).
pub fn propagate_selective(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    readout: &ReadoutTrajectory,
    initial: &QuantumState,
    store_states: bool,
) -> Result<SelectiveRunResult> {
    if readout.grid() != meas.grid() {
        return Err(QcError::ShapeError("readout grid does not match the measurement grid".into()));
    }
    meas.check_resolves(sys)?;
    propagate_selective_on(sys, meas.kappa(), readout, initial, store_states)
}

/// Grid-level propagation without the measurement-spec resolution guards;
/// used by instrument-identity checks that deliberately run on short grids.
pub fn propagate_selective_on(
    sys: &SystemSpec,
    kappa: f64,
    readout: &ReadoutTrajectory,
    initial: &QuantumState,
    store_states: bool,
) -> Result<SelectiveRunResult> {
    if initial.dim() != sys.dim() {
        return Err(QcError::ShapeError(format!(
            "initial state dim {} does not match system dim {}",
            initial.dim(),
            sys.dim()
        )));
    }
    if (initial.norm_sq() - 1.0).abs() > 1e-9 {
        return Err(QcError::Precondition("initial state must have unit norm".into()));
    }

    let grid = readout.grid();
    let dt = grid.dt();
    let dim = sys.dim();
    let coupling_bound = sys.coupling_norm_bound();
    let mut ws = Workspace::new(dim);

    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    // log of the factor divided out of psi so far
    let mut log_scale = 0.0f64;

    let mut p2_history = Vec::with_capacity(grid.n_points());
    let mut norm_sq_history = Vec::with_capacity(grid.n_points());
    let mut log_norm_sq_history = Vec::with_capacity(grid.n_points());
    let mut history = store_states.then(|| Vec::with_capacity(grid.n_points()));

    let record = |psi: &[C64],
                  log_scale: f64,
                  p2: &mut Vec<f64>,
                  norms: &mut Vec<f64>,
                  log_norms: &mut Vec<f64>,
                  history: &mut Option<Vec<QuantumState>>|
     -> Result<()> {
        let scaled_norm_sq = linalg::norm_sq(psi);
        let log_norm_sq = if scaled_norm_sq > 0.0 {
            scaled_norm_sq.ln() + 2.0 * log_scale
        } else {
            f64::NEG_INFINITY
        };
        norms.push(log_norm_sq.exp());
        log_norms.push(log_norm_sq);
        let p2_val = if dim >= 2 && scaled_norm_sq > 0.0 {
            psi[1].norm_sqr() / scaled_norm_sq
        } else {
            0.0
        };
        p2.push(p2_val);
        if let Some(h) = history {
            let n = scaled_norm_sq.sqrt();
            let normalized: Vec<C64> = if n > 0.0 {
                psi.iter().map(|c| c / n).collect()
            } else {
                psi.to_vec()
            };
            h.push(QuantumState::new(normalized)?);
        }
        Ok(())
    };

    record(
        &psi,
        log_scale,
        &mut p2_history,
        &mut norm_sq_history,
        &mut log_norm_sq_history,
        &mut history,
    )?;

    let mut prev_scaled_norm = linalg::norm_sq(&psi).sqrt();
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let e = readout.step_value(i);
        let drive_on = !sys.is_free() && sys.coupling_active(t);

        let worst_detuning = sys
            .levels()
            .iter()
            .map(|en| (en - e) * (en - e))
            .fold(0.0, f64::max);
        let stiffness = kappa * worst_detuning + if drive_on { coupling_bound } else { 0.0 };
        let substep_estimate = (dt * stiffness / SUBSTEP_BUDGET).ceil();
        if !substep_estimate.is_finite() || substep_estimate > MAX_SUBSTEPS as f64 {
            return Err(QcError::NumericFailure {
                step: i,
                what: format!("measurement term too stiff for the grid (readout value {e})"),
            });
        }
        let substeps = (substep_estimate as usize).max(1);
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            rk4_substep(sys, kappa, e, drive_on, &mut psi, h, &mut ws);
        }

        let scaled_norm_sq = linalg::norm_sq(&psi);
        if !scaled_norm_sq.is_finite() {
            return Err(QcError::NumericFailure { step: i, what: "non-finite norm".into() });
        }
        let scaled_norm = scaled_norm_sq.sqrt();
        if scaled_norm > prev_scaled_norm + NORM_GUARD_EPS {
            return Err(QcError::NumericFailure {
                step: i,
                what: format!("norm increased from {prev_scaled_norm} to {scaled_norm}"),
            });
        }
        prev_scaled_norm = scaled_norm;

        if scaled_norm_sq < RESCALE_FLOOR && scaled_norm_sq > 0.0 {
            let s = scaled_norm;
            log_scale += s.ln();
            for c in psi.iter_mut() {
                *c /= s;
            }
            prev_scaled_norm = 1.0;
        }

        record(
            &psi,
            log_scale,
            &mut p2_history,
            &mut norm_sq_history,
            &mut log_norm_sq_history,
            &mut history,
        )?;
    }

    let scaled_norm_sq = linalg::norm_sq(&psi);
    let log_norm_squared = if scaled_norm_sq > 0.0 {
        scaled_norm_sq.ln() + 2.0 * log_scale
    } else {
        f64::NEG_INFINITY
    };
    let scale = log_scale.exp();
    let final_state = QuantumState::new(psi.iter().map(|c| c * scale).collect())?;
    Ok(SelectiveRunResult {
        final_state,
        norm_squared: log_norm_squared.exp(),
        log_norm_squared,
        state_history: history,
        p2_history,
        norm_sq_history,
        log_norm_sq_history,
    })
}

/// Closed-form Rabi evolution of a resonantly driven two-level system in the
/// absence of measurement.
pub fn rabi_solution(v: f64, t: f64, c0: (C64, C64)) -> (C64, C64) {
    let (c1, c2) = c0;
    let cos = (v * t).cos();
    let sin = (v * t).sin();
    let i = C64::i();
    (c1 * cos - i * c2 * sin, c2 * cos - i * c1 * sin)
}

/// Exact solution for an undriven system: each coefficient decays by the
/// accumulated squared deviation of the readout from its level, with the
/// readout taken as the step function the propagator sees.
pub fn free_system_closed_form(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    readout: &ReadoutTrajectory,
    initial: &QuantumState,
) -> Result<QuantumState> {
    if !sys.is_free() {
        return Err(QcError::Precondition("closed form requires zero coupling".into()));
    }
    if readout.grid() != meas.grid() {
        return Err(QcError::ShapeError("readout grid does not match the measurement grid".into()));
    }
    if initial.dim() != sys.dim() {
        return Err(QcError::ShapeError("initial state dimension mismatch".into()));
    }
    let dt = meas.grid().dt();
    let kappa = meas.kappa();
    let amps = initial
        .amplitudes()
        .iter()
        .zip(sys.levels())
        .map(|(c, &en)| {
            let integral: f64 = (0..meas.grid().n_steps())
                .map(|i| {
                    let d = en - readout.step_value(i);
                    d * d * dt
                })
                .sum();
            c * (-kappa * integral).exp()
        })
        .collect();
    QuantumState::new(amps)
}
