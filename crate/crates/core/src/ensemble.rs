//! Weighted readout ensembles.
//!
//! A readout curve E(t) is a point in path space; its probability density
//! with respect to the per-step instrument measure is the final squared norm
//! of the conditioned state. This module samples candidate readouts from a
//! proposal distribution, attaches exact importance weights
//! P[E] * measure / proposal (kept in log space; the accumulated path
//! exponents easily reach hundreds), and reduces weighted statistics
//! deterministically in seed order.
//!
//! Two proposals are available. `Proposal::Midband` draws every step
//! independently from one wide Gaussian; it is simple and unbiased but its
//! weight variance grows exponentially with the number of steps, so it is
//! only useful on short grids. `Proposal::Instrument` draws each step from
//! the one-step instrument marginal conditioned on the current filtered
//! state, which reproduces the target path measure up to the drive-splitting
//! error and keeps the effective sample size close to the raw sample count
//! on grids of any length. It is the default everywhere an ensemble feeds
//! statistics.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QcError, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::linalg::{self, CMatrix};
use crate::readout::ReadoutTrajectory;
use crate::rng::trajectory_rng;
use crate::selective::{propagate_selective, propagate_selective_on};
use crate::state::QuantumState;
use crate::system::{MeasurementSpec, SystemSpec};

/// The functional measure on readout paths: a factor sqrt(2 kappa dt / pi)
/// per grid step. It is the unique per-step Gaussian-instrument measure
/// under which one instrument step resolves the identity exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentMeasure {
    kappa: f64,
    dt: f64,
}

impl InstrumentMeasure {
    pub fn new(kappa: f64, dt: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !(dt > 0.0) {
            return Err(QcError::InvalidSpec("need kappa >= 0 and dt > 0".into()));
        }
        Ok(InstrumentMeasure { kappa, dt })
    }

    pub fn from_measurement(meas: &MeasurementSpec) -> Self {
        InstrumentMeasure { kappa: meas.kappa(), dt: meas.dt() }
    }

    /// Readout-value measure density per grid step.
    pub fn per_step_normalizer(&self) -> f64 {
        (2.0 * self.kappa * self.dt / std::f64::consts::PI).sqrt()
    }

    pub fn log_per_step_normalizer(&self) -> f64 {
        0.5 * (2.0 * self.kappa * self.dt / std::f64::consts::PI).ln()
    }

    /// Standard deviation of the one-step instrument marginal around a level.
    pub fn step_sigma(&self) -> f64 {
        if self.kappa == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (2.0 * (self.kappa * self.dt).sqrt())
        }
    }
}

/// How candidate readouts are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Proposal {
    /// Every step i.i.d. Gaussian with mean (E_1 + E_n)/2 and standard
    /// deviation max(delta_e, 1/sqrt(2 kappa dt)).
    Midband,
    /// Sequential draw from the one-step instrument marginal conditioned on
    /// the filtered state so far.
    Instrument,
}

/// One sampled readout with everything the statistics layers need.
#[derive(Debug, Clone)]
pub struct WeightedReadout {
    pub readout: ReadoutTrajectory,
    /// P[E]: final squared norm of the conditioned state (density w.r.t. the
    /// instrument measure). Linear value; may underflow where the log does not.
    pub probability_density: f64,
    pub log_probability_density: f64,
    /// log of P[E] * measure / proposal, before any normalization.
    pub log_weight: f64,
    /// Conditional upper-level population over the grid.
    pub p2_history: Vec<f64>,
    pub final_state: QuantumState,
}

/// A full weighted sample set with its normalization diagnostics.
#[derive(Debug, Clone)]
pub struct ReadoutEnsemble {
    samples: Vec<WeightedReadout>,
    master_seed: u64,
    /// log of mean weight; the importance-sampling estimate of total mass
    /// (which is exactly one for a correctly normalized measure) is its exp.
    log_mass: f64,
    /// Standard error of the mass estimate, in linear mass units.
    mass_standard_error: f64,
    n_effective: f64,
}

impl ReadoutEnsemble {
    fn from_samples(samples: Vec<WeightedReadout>, master_seed: u64) -> Result<Self> {
        let max_log = samples
            .iter()
            .map(|s| s.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max_log.is_finite() {
            return Err(QcError::DegenerateEnsemble { max_log_weight: max_log });
        }
        let n = samples.len() as f64;
        let scaled: Vec<f64> = samples.iter().map(|s| (s.log_weight - max_log).exp()).collect();
        let sum: f64 = scaled.iter().sum();
        let sum_sq: f64 = scaled.iter().map(|w| w * w).sum();
        if sum <= 0.0 {
            return Err(QcError::DegenerateEnsemble { max_log_weight: max_log });
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let log_mass = mean.ln() + max_log;
        let mass_standard_error = max_log.exp() * (var / n).sqrt();
        let n_effective = sum * sum / sum_sq;
        Ok(ReadoutEnsemble { samples, master_seed, log_mass, mass_standard_error, n_effective })
    }

    pub fn samples(&self) -> &[WeightedReadout] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Importance-sampling estimate of the total measure mass; one for a
    /// correctly normalized instrument measure.
    pub fn mass_estimate(&self) -> f64 {
        self.log_mass.exp()
    }

    pub fn mass_standard_error(&self) -> f64 {
        self.mass_standard_error
    }

    /// Kish effective sample size of the self-normalized weights.
    pub fn n_effective(&self) -> f64 {
        self.n_effective
    }

    /// Self-normalized weights, summing to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let max_log = self
            .samples
            .iter()
            .map(|s| s.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> =
            self.samples.iter().map(|s| (s.log_weight - max_log).exp()).collect();
        let sum: f64 = scaled.iter().sum();
        scaled.into_iter().map(|w| w / sum).collect()
    }

    /// Weighted mean and standard error of a per-sample statistic.
    pub fn weighted_mean<F>(&self, f: F) -> (f64, f64)
    where
        F: Fn(&WeightedReadout) -> f64,
    {
        let weights = self.normalized_weights();
        let mean: f64 =
            self.samples.iter().zip(&weights).map(|(s, &w)| w * f(s)).sum();
        let var: f64 = self
            .samples
            .iter()
            .zip(&weights)
            .map(|(s, &w)| {
                let d = f(s) - mean;
                w * w * d * d
            })
            .sum();
        (mean, var.sqrt())
    }

    /// The mass identity check: the ensemble carries a normalized measure if
    /// its estimated total mass is one within sampling error.
    pub fn check_normalized_measure(&self) -> Result<()> {
        let mass = self.mass_estimate();
        // sampling error plus a floor for deterministic integrator bias
        let tol = 5.0 * self.mass_standard_error + 1e-4;
        if (mass - 1.0).abs() > tol {
            return Err(QcError::InvalidMeasure(format!(
                "ensemble mass {mass} differs from 1 beyond {tol}"
            )));
        }
        Ok(())
    }
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

struct DrawnPath {
    values: Vec<f64>,
    log_proposal: f64,
}

/// One candidate path from the midband proposal.
fn draw_midband<R: Rng>(rng: &mut R, grid: TimeGrid, mean: f64, sd: f64) -> DrawnPath {
    let mut values = Vec::with_capacity(grid.n_points());
    let mut log_proposal = 0.0;
    for _ in 0..grid.n_steps() {
        let e = mean + sd * rng.sample::<f64, _>(StandardNormal);
        log_proposal += log_normal_pdf(e, mean, sd);
        values.push(e);
    }
    values.push(*values.last().expect("at least one step"));
    DrawnPath { values, log_proposal }
}

/// One candidate path from the sequential instrument proposal: at every step
/// pick a level with the filtered populations, draw the readout from that
/// level's one-step Gaussian, and advance the filter (measurement Kraus
/// update followed by the drive unitary).
fn draw_instrument<R: Rng>(
    rng: &mut R,
    sys: &SystemSpec,
    kappa: f64,
    grid: TimeGrid,
    initial: &QuantumState,
    drive_step: Option<&CMatrix>,
) -> DrawnPath {
    let dt = grid.dt();
    let sigma = InstrumentMeasure { kappa, dt }.step_sigma();
    let levels = sys.levels();
    let dim = sys.dim();

    let mut psi: Vec<C64> = initial.amplitudes().to_vec();
    let mut values = Vec::with_capacity(grid.n_points());
    let mut log_proposal = 0.0;

    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        // populations of the filtered (unit-norm) state
        let mut populations: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = populations.iter().sum();
        for p in populations.iter_mut() {
            *p /= total;
        }
        // pick the corridor level, then the readout value
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut level_idx = dim - 1;
        for (n, &p) in populations.iter().enumerate() {
            acc += p;
            if u < acc {
                level_idx = n;
                break;
            }
        }
        let e = levels[level_idx] + sigma * rng.sample::<f64, _>(StandardNormal);
        values.push(e);
        // mixture density of the draw
        let mut best = f64::NEG_INFINITY;
        let logs: Vec<f64> = populations
            .iter()
            .zip(levels)
            .map(|(&p, &en)| {
                let l = if p > 0.0 {
                    p.ln() + log_normal_pdf(e, en, sigma)
                } else {
                    f64::NEG_INFINITY
                };
                best = best.max(l);
                l
            })
            .collect();
        log_proposal += best + logs.iter().map(|l| (l - best).exp()).sum::<f64>().ln();

        // filter update: instrument Kraus then drive
        for (n, c) in psi.iter_mut().enumerate() {
            let d = levels[n] - e;
            *c *= (-kappa * d * d * dt).exp();
        }
        let n2 = linalg::norm_sq(&psi);
        let n1 = n2.sqrt();
        for c in psi.iter_mut() {
            *c /= n1;
        }
        if let Some(u_step) = drive_step {
            if sys.coupling_active(t) {
                psi = u_step.matvec(&psi);
            }
        }
    }
    values.push(*values.last().expect("at least one step"));
    DrawnPath { values, log_proposal }
}

/// Draw `n_samples` weighted readouts. Deterministic for a fixed seed and
/// independent of thread count; each trajectory owns stream
/// (seed, index).
pub fn sample_readouts(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    n_samples: usize,
    master_seed: u64,
    initial: &QuantumState,
    proposal: Proposal,
) -> Result<ReadoutEnsemble> {
    if n_samples < 1 {
        return Err(QcError::Precondition("need at least one sample".into()));
    }
    if initial.dim() != sys.dim() {
        return Err(QcError::ShapeError("initial state dimension mismatch".into()));
    }
    meas.check_resolves(sys)?;

    let grid = meas.grid();
    let kappa = meas.kappa();
    let measure = InstrumentMeasure::from_measurement(meas);
    let log_measure_total = if kappa > 0.0 {
        grid.n_steps() as f64 * measure.log_per_step_normalizer()
    } else {
        0.0
    };
    let midband_mean = (sys.levels()[0] + sys.levels()[sys.dim() - 1]) / 2.0;
    let midband_sd = if kappa > 0.0 {
        sys.level_gap().max(1.0 / (2.0 * kappa * grid.dt()).sqrt())
    } else {
        sys.level_gap()
    };
    let drive_step = (!sys.is_free())
        .then(|| sys.coupling().exp_hermitian_scaled(C64::new(0.0, -grid.dt())));

    let jobs: Vec<Result<WeightedReadout>> = exec::run_batch(n_samples, |k| {
        let mut rng = trajectory_rng(master_seed, k as u64);
        let drawn = if kappa == 0.0 {
            // No measurement: every readout has density one and the measure
            // collapses; sample a nominal curve and give it unit weight.
            draw_midband(&mut rng, grid, midband_mean, midband_sd)
        } else {
            match proposal {
                Proposal::Midband => draw_midband(&mut rng, grid, midband_mean, midband_sd),
                Proposal::Instrument => {
                    draw_instrument(&mut rng, sys, kappa, grid, initial, drive_step.as_ref())
                }
            }
        };
        let readout = ReadoutTrajectory::new(grid, drawn.values)?;
        let run = propagate_selective(sys, meas, &readout, initial, false)?;
        let log_weight = if kappa == 0.0 {
            run.log_norm_squared
        } else {
            run.log_norm_squared + log_measure_total - drawn.log_proposal
        };
        Ok(WeightedReadout {
            readout,
            probability_density: run.norm_squared,
            log_probability_density: run.log_norm_squared,
            log_weight,
            p2_history: run.p2_history,
            final_state: run.final_state,
        })
    });

    let samples: Vec<WeightedReadout> = jobs.into_iter().collect::<Result<_>>()?;
    ReadoutEnsemble::from_samples(samples, master_seed)
}

/// Deviation of the one-step instrument completeness integral from one,
/// evaluated per level by direct quadrature over the readout value.
pub fn one_step_instrument_identity(kappa: f64, dt: f64, levels: &[f64]) -> Result<f64> {
    let measure = InstrumentMeasure::new(kappa, dt)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let sigma = measure.step_sigma();
    let normalizer = measure.per_step_normalizer();
    let mut worst: f64 = 0.0;
    for &en in levels {
        // Simpson quadrature over +-12 sigma
        let (lo, hi) = (en - 12.0 * sigma, en + 12.0 * sigma);
        let n = 4000usize; // even
        let h = (hi - lo) / n as f64;
        let f = |e: f64| normalizer * (-2.0 * kappa * dt * (en - e) * (en - e)).exp();
        let mut integral = f(lo) + f(hi);
        for k in 1..n {
            let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
            integral += weight * f(lo + h * k as f64);
        }
        integral *= h / 3.0;
        worst = worst.max((integral - 1.0).abs());
    }
    Ok(worst)
}

/// Monte Carlo estimate of the completeness of the full multi-step family of
/// conditioned propagators.
#[derive(Debug, Clone)]
pub struct UnitarityReport {
    /// Estimated operator, which should be the identity.
    pub estimate: CMatrix,
    /// Per-entry standard errors (real part in `re`, imaginary in `im`).
    pub standard_errors: CMatrix,
    /// Largest |entry - identity| deviation.
    pub max_deviation: f64,
    /// Largest deviation in units of its standard error.
    pub worst_sigma: f64,
    pub n_samples: usize,
}

/// Estimate integral(measure) U(E)^dag U(E) by importance sampling: per
/// sampled readout, propagate every basis state and average
/// (measure/proposal) * U^dag U. The proposal filter runs on an equal
/// superposition so every corridor is explored.
pub fn check_generalized_unitarity(
    sys: &SystemSpec,
    meas: &MeasurementSpec,
    n_samples: usize,
    master_seed: u64,
    proposal: Proposal,
) -> Result<UnitarityReport> {
    check_generalized_unitarity_on(sys, meas.kappa(), meas.grid(), n_samples, master_seed, proposal)
}

/// Grid-level form of the completeness check; the identity holds for any
/// number of steps, so short grids are allowed here (the one-step quadrature
/// is the analytic N = 1 case).
pub fn check_generalized_unitarity_on(
    sys: &SystemSpec,
    kappa: f64,
    grid: TimeGrid,
    n_samples: usize,
    master_seed: u64,
    proposal: Proposal,
) -> Result<UnitarityReport> {
    if n_samples < 2 {
        return Err(QcError::Precondition("need at least two samples".into()));
    }
    let dim = sys.dim();
    let measure = InstrumentMeasure::new(kappa.max(0.0), grid.dt())?;
    let log_measure_total = grid.n_steps() as f64 * measure.log_per_step_normalizer();
    let midband_mean = (sys.levels()[0] + sys.levels()[dim - 1]) / 2.0;
    let midband_sd = if kappa > 0.0 {
        sys.level_gap().max(1.0 / (2.0 * kappa * grid.dt()).sqrt())
    } else {
        sys.level_gap()
    };
    let spread =
        QuantumState::new(vec![C64::new(1.0 / (dim as f64).sqrt(), 0.0); dim]).expect("valid");
    let drive_step = (!sys.is_free())
        .then(|| sys.coupling().exp_hermitian_scaled(C64::new(0.0, -grid.dt())));

    let contributions: Vec<Result<CMatrix>> = exec::run_batch(n_samples, |k| {
        let mut rng = trajectory_rng(master_seed, k as u64);
        let drawn = if kappa == 0.0 {
            draw_midband(&mut rng, grid, midband_mean, midband_sd)
        } else {
            match proposal {
                Proposal::Midband => draw_midband(&mut rng, grid, midband_mean, midband_sd),
                Proposal::Instrument => {
                    draw_instrument(&mut rng, sys, kappa, grid, &spread, drive_step.as_ref())
                }
            }
        };
        let readout = ReadoutTrajectory::new(grid, drawn.values)?;
        let log_ratio =
            if kappa == 0.0 { 0.0 } else { log_measure_total - drawn.log_proposal };
        // Columns of U(E): normalized direction and log norm per basis state.
        let mut columns = Vec::with_capacity(dim);
        for m in 0..dim {
            let basis = QuantumState::basis_state(dim, m).expect("valid basis index");
            let run = propagate_selective_on(sys, kappa, &readout, &basis, false)?;
            let n2 = run.final_state.norm_sq();
            let direction: Vec<C64> = if n2 > 0.0 {
                run.final_state.amplitudes().iter().map(|c| c / n2.sqrt()).collect()
            } else {
                run.final_state.amplitudes().to_vec()
            };
            columns.push((direction, run.log_norm_squared));
        }
        // weight * (U^dag U)_{m,n} assembled in log magnitude to avoid underflow
        let mut contrib = CMatrix::zeros(dim);
        for m in 0..dim {
            for n in 0..dim {
                let overlap = linalg::inner(&columns[m].0, &columns[n].0);
                let log_mag = log_ratio + 0.5 * columns[m].1 + 0.5 * columns[n].1;
                contrib[(m, n)] = overlap * log_mag.exp();
            }
        }
        Ok(contrib)
    });

    let mut sum = CMatrix::zeros(dim);
    let mut sum_sq_re = vec![0.0f64; dim * dim];
    let mut sum_sq_im = vec![0.0f64; dim * dim];
    let mut count = 0.0f64;
    for c in contributions {
        let c = c?;
        sum.axpy_in_place(C64::new(1.0, 0.0), &c);
        for (j, v) in c.data().iter().enumerate() {
            sum_sq_re[j] += v.re * v.re;
            sum_sq_im[j] += v.im * v.im;
        }
        count += 1.0;
    }
    let estimate = sum.scale(C64::new(1.0 / count, 0.0));
    let mut standard_errors = CMatrix::zeros(dim);
    let mut max_deviation = 0.0f64;
    let mut worst_sigma = 0.0f64;
    for j in 0..dim * dim {
        let (r, c) = (j / dim, j % dim);
        let m = estimate.data()[j];
        let se_re = ((sum_sq_re[j] / count - m.re * m.re).max(0.0) / count).sqrt();
        let se_im = ((sum_sq_im[j] / count - m.im * m.im).max(0.0) / count).sqrt();
        standard_errors[(r, c)] = C64::new(se_re, se_im);
        let target = if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        let diff = m - target;
        max_deviation = max_deviation.max(diff.re.abs().max(diff.im.abs()));
        worst_sigma = worst_sigma
            .max(diff.re.abs() / se_re.max(1e-12))
            .max(diff.im.abs() / se_im.max(1e-12));
    }

    Ok(UnitarityReport { estimate, standard_errors, max_deviation, worst_sigma, n_samples })
}

/// Centered moving average with reflective boundaries, on the same grid.
pub fn smooth_readout(readout: &ReadoutTrajectory, window: f64) -> Result<ReadoutTrajectory> {
    let grid = readout.grid();
    let dt = grid.dt();
    if window < 2.0 * dt {
        return Err(QcError::Precondition(format!(
            "smoothing window {window} must be at least 2 dt = {}",
            2.0 * dt
        )));
    }
    let half = ((window / (2.0 * dt)).round() as i64).max(1);
    let n = readout.values().len() as i64;
    let values = readout.values();
    let mut out = Vec::with_capacity(values.len());
    for i in 0..n {
        let mut acc = 0.0;
        for j in (i - half)..=(i + half) {
            // reflect indices at the boundaries: -1 -> 0, n -> n-1
            let idx = if j < 0 {
                (-j - 1).min(n - 1)
            } else if j >= n {
                (2 * n - 1 - j).max(0)
            } else {
                j
            };
            acc += values[idx as usize];
        }
        out.push(acc / (2 * half + 1) as f64);
    }
    ReadoutTrajectory::new(grid, out)
}
