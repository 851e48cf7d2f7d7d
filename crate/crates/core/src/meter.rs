//! Microscopic realizations of the continuous measurement.
//!
//! Two discrete models validate the phenomenological description: chains of
//! instantaneous projective measurements interleaved with the drive, and
//! long series of soft two-outcome observations. The soft meter is a
//! diagonal Kraus pair M+ = diag(sqrt(p_n)), M- = diag(sqrt(1 - p_n)): each
//! step extracts a little "which level" information, and its outcome ratio
//! over an N-series reconstructs the energy readout curve.

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::ensemble::smooth_readout;
use crate::error::{QcError, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::linalg;
use crate::monitor::{classify_readout, MonitorReport};
use crate::readout::ReadoutTrajectory;
use crate::rng::run_rng;
use crate::state::QuantumState;
use crate::stochastic::derive_stream;
use crate::system::SystemSpec;

/// A repeated two-outcome observation: level n responds "positive" with
/// probability p_positive[n] per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMeter {
    p_positive: Vec<f64>,
    step_interval: f64,
}

impl SoftMeter {
    pub fn new(p_positive: Vec<f64>, step_interval: f64) -> Result<Self> {
        if p_positive.len() < 2 {
            return Err(QcError::InvalidSpec("need a probability per level".into()));
        }
        if p_positive.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(QcError::InvalidSpec("probabilities must lie in [0, 1]".into()));
        }
        if !(step_interval > 0.0) {
            return Err(QcError::InvalidSpec("step interval must be positive".into()));
        }
        Ok(SoftMeter { p_positive, step_interval })
    }

    /// Two-level meter; enforces the weakness condition
    /// |p1 - p2| < min(mean, 1 - mean) so a single outcome cannot resolve
    /// the level.
    pub fn two_level(p1: f64, p2: f64, step_interval: f64) -> Result<Self> {
        let meter = Self::new(vec![p1, p2], step_interval)?;
        let mean = (p1 + p2) / 2.0;
        if (p1 - p2).abs() >= mean.min(1.0 - mean) {
            return Err(QcError::OutsideWeakRegime(format!(
                "|p1 - p2| = {} not below min(mean, 1-mean) = {}",
                (p1 - p2).abs(),
                mean.min(1.0 - mean)
            )));
        }
        Ok(meter)
    }

    /// Projective two-outcome meter (p = 0 / 1); the weakness condition is
    /// deliberately waived so the Zeno limit of the instrument is reachable.
    pub fn projective_limit(step_interval: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], step_interval)
    }

    pub fn p_positive(&self) -> &[f64] {
        &self.p_positive
    }

    pub fn step_interval(&self) -> f64 {
        self.step_interval
    }

    /// Per-step overlap of the two outcome branches between levels 1 and 2:
    /// sqrt(p1 p2) + sqrt((1-p1)(1-p2)). The unconditional off-diagonal is
    /// multiplied by exactly this factor each step.
    pub fn branch_overlap(&self) -> f64 {
        let (p1, p2) = (self.p_positive[0], self.p_positive[1]);
        (p1 * p2).sqrt() + ((1.0 - p1) * (1.0 - p2)).sqrt()
    }

    /// Exact dephasing rate of the unconditional evolution: -ln(overlap)/dt.
    pub fn dephasing_rate(&self) -> f64 {
        -self.branch_overlap().ln() / self.step_interval
    }

    /// Measurement strength of the continuous description with the same
    /// dephasing: the master equation damps the off-diagonal at
    /// kappa_eff * gap^2 / 2, so kappa_eff = 2 rate / gap^2.
    pub fn effective_kappa(&self, level_gap: f64) -> f64 {
        2.0 * self.dephasing_rate() / (level_gap * level_gap)
    }
}

#[derive(Debug, Clone)]
pub struct ProjectiveChainResult {
    /// Level index observed at each measurement.
    pub outcomes: Vec<usize>,
    pub final_state: QuantumState,
}

/// Alternate free Rabi evolution over T_R/(2 n) with projective level
/// measurements, across one pi pulse. Survival in the initial level for all
/// n outcomes has probability cos(pi/2n)^(2n).
pub fn projective_chain(
    sys: &SystemSpec,
    n_measurements: usize,
    initial: &QuantumState,
    seed: u64,
) -> Result<ProjectiveChainResult> {
    if n_measurements < 1 {
        return Err(QcError::Precondition("need at least one measurement".into()));
    }
    if sys.dim() != initial.dim() {
        return Err(QcError::ShapeError("initial state dimension mismatch".into()));
    }
    let t_r = sys.rabi_period();
    if !t_r.is_finite() {
        return Err(QcError::Precondition("projective chain needs a driven system".into()));
    }
    let interval = t_r / (2.0 * n_measurements as f64);
    let u_step = sys.coupling().exp_hermitian_scaled(C64::new(0.0, -interval));
    let mut rng = run_rng(seed);
    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    let mut outcomes = Vec::with_capacity(n_measurements);
    for _ in 0..n_measurements {
        psi = u_step.matvec(&psi);
        // Born sampling over level populations, then project
        let populations: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = populations.iter().sum();
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut outcome = psi.len() - 1;
        for (n, &p) in populations.iter().enumerate() {
            acc += p;
            if u < acc {
                outcome = n;
                break;
            }
        }
        let amp = psi[outcome] / populations[outcome].sqrt();
        for (n, c) in psi.iter_mut().enumerate() {
            *c = if n == outcome { amp } else { C64::new(0.0, 0.0) };
        }
        outcomes.push(outcome);
    }
    Ok(ProjectiveChainResult { outcomes, final_state: QuantumState::new(psi)? })
}

/// Outcome record of a soft-observation run.
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    /// true = positive outcome.
    pub outcomes: Vec<bool>,
    pub step_interval: f64,
}

#[derive(Debug, Clone)]
pub struct SoftObservationRun {
    pub record: ObservationRecord,
    pub final_state: QuantumState,
    /// Conditional upper-level population after every step (index 0 is the
    /// initial state).
    pub p2_history: Vec<f64>,
}

/// Drive the system while applying the two-outcome instrument once per step:
/// sample the outcome with probability sum_n p_n |C_n|^2, apply the matching
/// Kraus operator, renormalize.
pub fn soft_observation_run(
    sys: &SystemSpec,
    meter: &SoftMeter,
    duration: f64,
    seed: u64,
) -> Result<SoftObservationRun> {
    if meter.p_positive().len() != sys.dim() {
        return Err(QcError::ShapeError("meter probabilities do not match the level count".into()));
    }
    let dt = meter.step_interval();
    let n_steps = (duration / dt).round() as usize;
    if n_steps < 1 {
        return Err(QcError::Precondition("duration shorter than one meter step".into()));
    }
    let initial = QuantumState::basis_state(sys.dim(), 0)?;
    soft_observation_run_from(sys, meter, &initial, n_steps, seed)
}

pub fn soft_observation_run_from(
    sys: &SystemSpec,
    meter: &SoftMeter,
    initial: &QuantumState,
    n_steps: usize,
    seed: u64,
) -> Result<SoftObservationRun> {
    let dt = meter.step_interval();
    let u_step = (!sys.is_free())
        .then(|| sys.coupling().exp_hermitian_scaled(C64::new(0.0, -dt)));
    let mut rng = run_rng(seed);
    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    let mut outcomes = Vec::with_capacity(n_steps);
    let mut p2_history = Vec::with_capacity(n_steps + 1);
    p2_history.push(psi[1].norm_sqr() / linalg::norm_sq(&psi));

    for i in 0..n_steps {
        let t = dt * i as f64;
        if let Some(u) = &u_step {
            if sys.coupling_active(t) {
                psi = u.matvec(&psi);
            }
        }
        // outcome statistics follow the superposition weights
        let p_plus: f64 = psi
            .iter()
            .zip(meter.p_positive())
            .map(|(c, &p)| p * c.norm_sqr())
            .sum::<f64>()
            / linalg::norm_sq(&psi);
        let positive = rng.gen::<f64>() < p_plus;
        outcomes.push(positive);
        for (c, &p) in psi.iter_mut().zip(meter.p_positive()) {
            let k = if positive { p.sqrt() } else { (1.0 - p).sqrt() };
            *c *= k;
        }
        let n2 = linalg::norm_sq(&psi);
        if !(n2 > 0.0) {
            return Err(QcError::NumericFailure { step: i, what: "state annihilated".into() });
        }
        let n1 = n2.sqrt();
        for c in psi.iter_mut() {
            *c /= n1;
        }
        p2_history.push(psi[1].norm_sqr());
    }

    Ok(SoftObservationRun {
        record: ObservationRecord { outcomes, step_interval: dt },
        final_state: QuantumState::new(psi)?,
        p2_history,
    })
}

/// Invert N-series outcome ratios into an energy readout: per series,
/// n = N+/N and E = E_1 + (n - p_1)/(p_2 - p_1) * gap, clamped to
/// [E_1 - gap, E_2 + gap]. One point per series, timestamped at the series
/// left edge on the coarse grid.
pub fn reconstruct_readout(
    record: &ObservationRecord,
    meter: &SoftMeter,
    sys: &SystemSpec,
    series_length: usize,
) -> Result<ReadoutTrajectory> {
    let (p1, p2) = (meter.p_positive()[0], meter.p_positive()[1]);
    if (p2 - p1).abs() < 1e-12 {
        return Err(QcError::NonInvertibleMeter);
    }
    if series_length < 1 {
        return Err(QcError::Precondition("series length must be positive".into()));
    }
    let n_series = record.outcomes.len() / series_length;
    if n_series < 1 {
        return Err(QcError::Precondition("record shorter than one series".into()));
    }
    let gap = sys.level_gap();
    let (e1, e2) = (sys.levels()[0], sys.levels()[1]);
    let (lo, hi) = (e1 - gap, e2 + gap);
    let coarse_dt = record.step_interval * series_length as f64;
    let grid = TimeGrid::new(coarse_dt, n_series)?;
    let mut values = Vec::with_capacity(n_series + 1);
    for chunk in record.outcomes.chunks_exact(series_length) {
        let positives = chunk.iter().filter(|&&o| o).count() as f64;
        let ratio = positives / series_length as f64;
        let e = e1 + (ratio - p1) / (p2 - p1) * gap;
        values.push(e.clamp(lo, hi));
    }
    values.push(*values.last().expect("at least one series"));
    ReadoutTrajectory::new(grid, values)
}

/// Comparison of the soft meter's measured ensemble dephasing against the
/// closed-form per-step overlap decay.
#[derive(Debug, Clone)]
pub struct KappaMatchReport {
    /// -ln(branch overlap) / dt: the exact rate of the instrument.
    pub exact_rate: f64,
    /// Rate fitted from the Monte Carlo ensemble mean off-diagonal.
    pub measured_rate: f64,
    pub relative_deviation: f64,
    /// Continuous-measurement strength with the same dephasing.
    pub kappa_eff: f64,
}

/// Estimate the ensemble dephasing rate of the undriven soft-observation
/// model and compare with the closed form. The weak-regime guard rejects
/// meters whose single step already distinguishes the levels.
pub fn match_effective_kappa(
    meter: &SoftMeter,
    sys: &SystemSpec,
    n_runs: usize,
    seed: u64,
) -> Result<KappaMatchReport> {
    if !sys.is_free() {
        return Err(QcError::Precondition("rate matching runs on the undriven system".into()));
    }
    if meter.branch_overlap() < 0.5 {
        return Err(QcError::OutsideWeakRegime(format!(
            "per-step branch overlap {} below 0.5",
            meter.branch_overlap()
        )));
    }
    if n_runs < 2 {
        return Err(QcError::Precondition("need at least two runs".into()));
    }
    let exact_rate = meter.dephasing_rate();
    // run long enough for about one decay constant
    let n_steps = ((1.0 / exact_rate / meter.step_interval()).ceil() as usize).clamp(20, 20_000);
    let initial = QuantumState::two_level_superposition(0.5)?;

    let offdiags: Vec<Vec<f64>> = exec::run_batch(n_runs, |k| {
        let run = soft_observation_run_from(
            sys,
            meter,
            &initial,
            n_steps,
            derive_stream(seed, k as u64),
        )
        .expect("soft run on validated inputs");
        // the trajectory off-diagonal, replayed from the outcome record
        replay_offdiagonal(meter, &initial, &run.record)
    });

    // ensemble mean off-diagonal per step, then a log-linear fit
    let mut mean = vec![0.0f64; n_steps + 1];
    for run in &offdiags {
        for (m, v) in mean.iter_mut().zip(run) {
            *m += v / n_runs as f64;
        }
    }
    let dt = meter.step_interval();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &m) in mean.iter().enumerate() {
        if m > 1e-4 {
            xs.push(dt * i as f64);
            ys.push(m.ln());
        }
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    let measured_rate = -slope;
    Ok(KappaMatchReport {
        exact_rate,
        measured_rate,
        relative_deviation: (measured_rate - exact_rate).abs() / exact_rate,
        kappa_eff: meter.effective_kappa(sys.level_gap()),
    })
}

/// |rho_12| of one conditioned trajectory given its outcome record.
fn replay_offdiagonal(
    meter: &SoftMeter,
    initial: &QuantumState,
    record: &ObservationRecord,
) -> Vec<f64> {
    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    let mut out = Vec::with_capacity(record.outcomes.len() + 1);
    out.push((psi[0] * psi[1].conj()).norm());
    for &positive in &record.outcomes {
        for (c, &p) in psi.iter_mut().zip(meter.p_positive()) {
            let k = if positive { p.sqrt() } else { (1.0 - p).sqrt() };
            *c *= k;
        }
        let n1 = linalg::norm_sq(&psi).sqrt();
        for c in psi.iter_mut() {
            *c /= n1;
        }
        out.push((psi[0] * psi[1].conj()).norm());
    }
    out
}

/// Monitoring statistics of the microscopic model: many soft-observation
/// runs of the monitored pi pulse, each classified through its reconstructed
/// (and smoothed) readout with the same band rule as the phenomenological
/// ensemble.
#[derive(Debug, Clone)]
pub struct MicroMonitorReport {
    pub p_transition: f64,
    pub p_transition_se: f64,
    pub fidelity: f64,
    pub fidelity_se: f64,
    pub ambiguous_fraction: f64,
    pub n_runs: usize,
    pub kappa_eff: f64,
}

impl MicroMonitorReport {
    /// Combined-sigma agreement with a phenomenological report.
    pub fn agrees_with(&self, other: &MonitorReport, k_sigma: f64) -> bool {
        let p_tol = k_sigma * (self.p_transition_se.powi(2) + other.p_transition_se.powi(2)).sqrt();
        let f_tol = k_sigma * (self.fidelity_se.powi(2) + other.fidelity_se.powi(2)).sqrt();
        (self.p_transition - other.p_transition).abs() <= p_tol
            && (self.fidelity - other.fidelity).abs() <= f_tol
    }
}

pub fn soft_meter_monitoring(
    sys: &SystemSpec,
    meter: &SoftMeter,
    duration: f64,
    n_runs: usize,
    seed: u64,
    series_length: usize,
    smoothing_window: Option<f64>,
) -> Result<MicroMonitorReport> {
    if sys.dim() != 2 {
        return Err(QcError::Precondition("monitoring needs a two-level system".into()));
    }
    let t_r = sys.rabi_period();
    if !t_r.is_finite() {
        return Err(QcError::Precondition("monitoring needs a driven system".into()));
    }
    let n_steps = (duration / meter.step_interval()).round() as usize;
    let window = smoothing_window.unwrap_or(crate::monitor::SMOOTHING_FRACTION * t_r);
    let gap = sys.level_gap();
    let band = crate::monitor::BAND_FRACTION * gap;
    let dwell = crate::monitor::DWELL_FRACTION * t_r;
    let levels = (sys.levels()[0], sys.levels()[1]);
    let initial = QuantumState::basis_state(2, 0)?;

    let per_run: Vec<Result<(f64, Option<bool>)>> = exec::run_batch(n_runs, |k| {
        let run = soft_observation_run_from(
            sys,
            meter,
            &initial,
            n_steps,
            derive_stream(seed, k as u64),
        )?;
        let readout = reconstruct_readout(&run.record, meter, sys, series_length)?;
        let smoothed = smooth_readout(&readout, window.max(2.0 * readout.grid().dt()))?;
        let class = classify_readout(&smoothed, levels, band, dwell);
        let p2_final = *run.p2_history.last().expect("nonempty");
        let verdict = p2_final > 0.5;
        let matched = match class {
            crate::monitor::ReadoutClass::Transition => Some(verdict),
            crate::monitor::ReadoutClass::NoTransition => Some(!verdict),
            crate::monitor::ReadoutClass::Ambiguous => None,
        };
        Ok((p2_final, matched))
    });

    let mut p_sum = 0.0;
    let mut p_sq = 0.0;
    let mut unambiguous = 0.0f64;
    let mut hits = 0.0f64;
    for item in &per_run {
        let (p2, matched) = match item {
            Ok(v) => v,
            Err(e) => return Err(QcError::Precondition(format!("run failed: {e}"))),
        };
        p_sum += p2;
        p_sq += p2 * p2;
        if let Some(hit) = matched {
            unambiguous += 1.0;
            if *hit {
                hits += 1.0;
            }
        }
    }
    let n = n_runs as f64;
    let p_transition = p_sum / n;
    let p_var = (p_sq / n - p_transition * p_transition).max(0.0);
    let fidelity = if unambiguous > 0.0 { hits / unambiguous } else { 0.0 };
    let f_var = if unambiguous > 0.0 { fidelity * (1.0 - fidelity) / unambiguous } else { 0.0 };

    Ok(MicroMonitorReport {
        p_transition,
        p_transition_se: (p_var / n).sqrt(),
        fidelity,
        fidelity_se: f_var.sqrt(),
        ambiguous_fraction: 1.0 - unambiguous / n,
        n_runs,
        kappa_eff: meter.effective_kappa(gap),
    })
}
