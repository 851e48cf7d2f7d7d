//! Transition monitoring for the resonantly driven two-level system.
//!
//! Three time scales organize the physics: the run length T, the Rabi period
//! T_R = pi / v, and the level resolution time T_lr = 1 / (kappa dE^2).
//! Measurement much faster than the drive freezes the transition (Zeno);
//! measurement much slower leaves the Rabi oscillation untouched but learns
//! nothing; when all three scales are comparable the smoothed readout tracks
//! the transition with a quantifiable fidelity while the transition
//! probability drops toward one half.

use crate::ensemble::{sample_readouts, smooth_readout, Proposal, ReadoutEnsemble};
use crate::error::{QcError, Result};
use crate::readout::ReadoutTrajectory;
use crate::state::QuantumState;
use crate::system::{MeasurementSpec, SystemSpec};

/// "much less than" threshold for the regime rules.
const MUCH_LESS: f64 = 0.1;
/// "comparable" band for the intermediate regime: every pairwise ratio of
/// the three time scales inside [1/2, 2].
const COMPARABLE_LO: f64 = 0.5;
const COMPARABLE_HI: f64 = 2.0;

/// Width of the classification bands around each level.
pub const BAND_FRACTION: f64 = 0.25;
/// Required residence inside a band at the end of the run, as a fraction of
/// the Rabi period.
pub const DWELL_FRACTION: f64 = 0.2;
/// Default smoothing window as a fraction of the Rabi period: slightly
/// shorter than the transition time T_R / 2.
pub const SMOOTHING_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Zeno,
    Rabi,
    Intermediate,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeLabel {
    pub regime: Regime,
    /// T_lr / T_R
    pub tlr_over_tr: f64,
    /// T / T_R
    pub t_over_tr: f64,
}

/// Apply the threshold rules to the three time scales.
pub fn classify_regime(meas: &MeasurementSpec, sys: &SystemSpec) -> RegimeLabel {
    let t_total = meas.duration();
    let t_r = sys.rabi_period();
    let t_lr = meas.level_resolution_time();

    let tlr_over_tr = t_lr / t_r;
    let t_over_tr = t_total / t_r;

    let much_less = |a: f64, b: f64| a <= MUCH_LESS * b;
    let comparable = |a: f64, b: f64| {
        let r = a / b;
        (COMPARABLE_LO..=COMPARABLE_HI).contains(&r)
    };

    let regime = if t_r.is_infinite() && t_lr.is_infinite() {
        Regime::Unclassified
    } else if much_less(t_lr, t_r) && much_less(t_r, t_total) {
        Regime::Zeno
    } else if much_less(t_r, t_total) && much_less(t_total, t_lr) {
        Regime::Rabi
    } else if comparable(t_lr, t_r) && comparable(t_total, t_r) && comparable(t_total, t_lr) {
        Regime::Intermediate
    } else {
        Regime::Unclassified
    };

    RegimeLabel { regime, tlr_over_tr, t_over_tr }
}

/// Verdict of the smoothed-readout classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutClass {
    Transition,
    NoTransition,
    Ambiguous,
}

/// Classify a smoothed readout by band residence: a transition readout
/// crosses into the upper band (level +- band_half_width) and stays there
/// contiguously for at least `dwell` time units; a no-transition readout
/// never does, while holding the lower band for a dwell somewhere; a curve
/// that settles in neither band is ambiguous.
pub fn classify_readout(
    smoothed: &ReadoutTrajectory,
    levels: (f64, f64),
    band_half_width: f64,
    dwell: f64,
) -> ReadoutClass {
    let dt = smoothed.grid().dt();
    let needed = ((dwell / dt).round() as usize).max(1);
    let values = smoothed.values();
    let in_band = |v: f64, level: f64| (v - level).abs() <= band_half_width;

    let has_dwell = |level: f64| {
        let mut run = 0usize;
        for &v in values {
            if in_band(v, level) {
                run += 1;
                if run >= needed {
                    return true;
                }
            } else {
                run = 0;
            }
        }
        false
    };

    if has_dwell(levels.1) {
        ReadoutClass::Transition
    } else if has_dwell(levels.0) {
        ReadoutClass::NoTransition
    } else {
        ReadoutClass::Ambiguous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassSplit {
    pub transition: f64,
    pub no_transition: f64,
    pub ambiguous: f64,
}

#[derive(Debug, Clone)]
pub struct MonitorReport {
    pub regime: RegimeLabel,
    /// Weighted mean of the final conditional upper-level population.
    pub p_transition: f64,
    pub p_transition_se: f64,
    /// Weighted fraction of unambiguous readouts whose class matches the
    /// final-state verdict.
    pub fidelity: f64,
    pub fidelity_se: f64,
    pub ambiguous_fraction: f64,
    pub class_split: ClassSplit,
    pub n_effective: f64,
    pub n_samples: usize,
    pub smoothing_window: f64,
    /// Weighted mean conditional upper-level population over the grid.
    pub mean_p2_history: Vec<f64>,
}

/// Ensemble statistics of the monitored transition for an arbitrary drive
/// window. `smoothing_window` defaults to SMOOTHING_FRACTION * T_R.
pub fn monitoring_statistics(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    n_samples: usize,
    master_seed: u64,
    smoothing_window: Option<f64>,
) -> Result<MonitorReport> {
    if sys.dim() != 2 {
        return Err(QcError::Precondition("monitoring statistics need a two-level system".into()));
    }
    let t_r = sys.rabi_period();
    if !t_r.is_finite() {
        return Err(QcError::Precondition("monitoring needs a driven system".into()));
    }
    let initial = QuantumState::basis_state(2, 0)?;
    let ensemble = sample_readouts(sys, meas, n_samples, master_seed, &initial, Proposal::Instrument)?;
    monitoring_statistics_from(sys, meas, &ensemble, smoothing_window)
}

/// The same statistics computed from an existing ensemble.
pub fn monitoring_statistics_from(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    ensemble: &ReadoutEnsemble,
    smoothing_window: Option<f64>,
) -> Result<MonitorReport> {
    let t_r = sys.rabi_period();
    let window = smoothing_window.unwrap_or(SMOOTHING_FRACTION * t_r);
    let gap = sys.level_gap();
    let band = BAND_FRACTION * gap;
    let dwell = DWELL_FRACTION * t_r;
    let levels = (sys.levels()[0], sys.levels()[1]);

    let weights = ensemble.normalized_weights();
    let n_points = meas.grid().n_points();

    let mut mean_p2_history = vec![0.0f64; n_points];
    let mut split = ClassSplit::default();
    let mut fid_mass = 0.0f64; // weight mass of unambiguous samples
    let mut fid_hit = 0.0f64; // weight mass of matching unambiguous samples
    let mut classes = Vec::with_capacity(ensemble.len());
    let mut verdicts = Vec::with_capacity(ensemble.len());

    for (sample, &w) in ensemble.samples().iter().zip(&weights) {
        for (acc, &p2) in mean_p2_history.iter_mut().zip(&sample.p2_history) {
            *acc += w * p2;
        }
        let smoothed = smooth_readout(&sample.readout, window)?;
        let class = classify_readout(&smoothed, levels, band, dwell);
        let transitioned = *sample.p2_history.last().expect("nonempty history") > 0.5;
        classes.push(class);
        verdicts.push(transitioned);
        match class {
            ReadoutClass::Transition => split.transition += w,
            ReadoutClass::NoTransition => split.no_transition += w,
            ReadoutClass::Ambiguous => split.ambiguous += w,
        }
        if class != ReadoutClass::Ambiguous {
            fid_mass += w;
            let matches = (class == ReadoutClass::Transition) == transitioned;
            if matches {
                fid_hit += w;
            }
        }
    }

    let (p_transition, p_transition_se) =
        ensemble.weighted_mean(|s| *s.p2_history.last().expect("nonempty history"));

    let fidelity = if fid_mass > 0.0 { fid_hit / fid_mass } else { 0.0 };
    // standard error of the ratio estimator over the unambiguous subset
    let mut fid_var = 0.0f64;
    if fid_mass > 0.0 {
        for (&w, (&class, &verdict)) in
            weights.iter().zip(classes.iter().zip(&verdicts))
        {
            if class == ReadoutClass::Ambiguous {
                continue;
            }
            let x = ((class == ReadoutClass::Transition) == verdict) as u32 as f64;
            let wn = w / fid_mass;
            fid_var += wn * wn * (x - fidelity) * (x - fidelity);
        }
    }

    Ok(MonitorReport {
        regime: classify_regime(meas, sys),
        p_transition,
        p_transition_se,
        fidelity,
        fidelity_se: fid_var.sqrt(),
        ambiguous_fraction: split.ambiguous,
        class_split: split,
        n_effective: ensemble.n_effective(),
        n_samples: ensemble.len(),
        smoothing_window: window,
        mean_p2_history,
    })
}

/// The monitored pi-pulse experiment: drive window of length T_R / 2
/// starting from the lower level, measurement running over the whole grid.
pub fn run_monitoring_experiment(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    n_samples: usize,
    master_seed: u64,
    smoothing_window: Option<f64>,
) -> Result<MonitorReport> {
    let t_r = sys.rabi_period();
    let window_len = match sys.pulse_window() {
        Some((on, off)) => off - on,
        None => f64::INFINITY,
    };
    if !t_r.is_finite() || (window_len - t_r / 2.0).abs() > 1e-9 * t_r {
        return Err(QcError::Precondition(format!(
            "monitoring experiment needs a pi pulse: window {window_len} vs T_R/2 {}",
            t_r / 2.0
        )));
    }
    monitoring_statistics(sys, meas, n_samples, master_seed, smoothing_window)
}

#[derive(Debug, Clone)]
pub struct ZenoScanRow {
    pub kappa: f64,
    pub level_resolution_time: f64,
    pub p_transition: f64,
    pub standard_error: f64,
    pub n_effective: f64,
}

#[derive(Debug, Clone)]
pub struct ProjectiveScanRow {
    pub n_measurements: usize,
    pub survival_monte_carlo: f64,
    pub survival_exact: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone)]
pub struct ZenoScanTable {
    pub rows: Vec<ZenoScanRow>,
    pub projective: Vec<ProjectiveScanRow>,
}

impl ZenoScanTable {
    /// True when p_transition never increases beyond `k_sigma` combined
    /// standard errors between adjacent rows.
    pub fn is_monotone_nonincreasing(&self, k_sigma: f64) -> bool {
        self.rows.windows(2).all(|pair| {
            let tol = k_sigma * (pair[0].standard_error.powi(2) + pair[1].standard_error.powi(2)).sqrt();
            pair[1].p_transition <= pair[0].p_transition + tol
        })
    }
}

/// Transition probability of the monitored pi pulse as a function of the
/// measurement strength, with optional projective-chain rows for comparison.
/// Each row picks its own step fine enough for that row's resolution time.
pub fn zeno_scan(
    sys: &SystemSpec,
    kappas: &[f64],
    n_projective: Option<&[usize]>,
    n_samples: usize,
    master_seed: u64,
) -> Result<ZenoScanTable> {
    if sys.dim() != 2 {
        return Err(QcError::Precondition("zeno scan needs a two-level system".into()));
    }
    let t_r = sys.rabi_period();
    let (on, off) = sys
        .pulse_window()
        .ok_or_else(|| QcError::Precondition("zeno scan needs a pulse window".into()))?;
    if on != 0.0 || !t_r.is_finite() || ((off - on) - t_r / 2.0).abs() > 1e-9 * t_r {
        return Err(QcError::Precondition("zeno scan needs a pi pulse starting at t = 0".into()));
    }
    let duration = off;
    let gap = sys.level_gap();
    let initial = QuantumState::basis_state(2, 0)?;

    let mut rows = Vec::with_capacity(kappas.len());
    for (row_idx, &kappa) in kappas.iter().enumerate() {
        if kappa < 0.0 {
            return Err(QcError::InvalidSpec(format!("negative kappa {kappa} in scan")));
        }
        let t_lr = if kappa > 0.0 { 1.0 / (kappa * gap * gap) } else { f64::INFINITY };
        let mut dt = (duration / 200.0).min(t_r / 100.0);
        if t_lr.is_finite() {
            dt = dt.min(t_lr / 40.0);
        }
        let n_steps = (duration / dt).ceil() as usize;
        let meas = MeasurementSpec::new(kappa, duration, duration / n_steps as f64, gap)?;
        let ensemble = sample_readouts(
            sys,
            &meas,
            n_samples,
            master_seed.wrapping_add(row_idx as u64),
            &initial,
            Proposal::Instrument,
        )?;
        let (p, se) = ensemble.weighted_mean(|s| *s.p2_history.last().expect("nonempty"));
        rows.push(ZenoScanRow {
            kappa,
            level_resolution_time: t_lr,
            p_transition: p,
            standard_error: se,
            n_effective: ensemble.n_effective(),
        });
    }

    let mut projective = Vec::new();
    if let Some(counts) = n_projective {
        for (i, &n_meas) in counts.iter().enumerate() {
            let runs = n_samples.max(2);
            let outcomes = crate::exec::run_batch(runs, |k| {
                let chain = crate::meter::projective_chain(
                    sys,
                    n_meas,
                    &initial,
                    crate::stochastic::derive_stream(
                        master_seed.wrapping_add(0x5eed + i as u64),
                        k as u64,
                    ),
                )
                .expect("projective chain on validated inputs");
                chain.outcomes.iter().all(|&o| o == 0) as u32 as f64
            });
            let mean = outcomes.iter().sum::<f64>() / runs as f64;
            let var = outcomes.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / runs as f64;
            projective.push(ProjectiveScanRow {
                n_measurements: n_meas,
                survival_monte_carlo: mean,
                survival_exact: projective_survival_exact(n_meas),
                standard_error: (var / runs as f64).sqrt(),
            });
        }
    }

    Ok(ZenoScanTable { rows, projective })
}

/// Closed-form survival probability of the lower level under `n` equally
/// spaced projective measurements across a pi pulse: cos(pi/2n)^(2n).
pub fn projective_survival_exact(n: usize) -> f64 {
    let theta = std::f64::consts::FRAC_PI_2 / n as f64;
    theta.cos().powi(2 * n as i32)
}

/// Time between consecutive upward crossings of 1/2 by the population curve,
/// with linear interpolation; `None` if fewer than two are present.
pub fn fitted_p2_period(p2: &[f64], dt: f64) -> Option<f64> {
    let mut crossings = Vec::new();
    for i in 1..p2.len() {
        if p2[i - 1] < 0.5 && p2[i] >= 0.5 {
            let frac = (0.5 - p2[i - 1]) / (p2[i] - p2[i - 1]);
            crossings.push(dt * ((i - 1) as f64 + frac));
            if crossings.len() == 2 {
                break;
            }
        }
    }
    (crossings.len() == 2).then(|| crossings[1] - crossings[0])
}
