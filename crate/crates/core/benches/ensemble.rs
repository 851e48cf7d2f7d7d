//! Ensemble-layer throughput: rayon batch runner vs the sequential fallback
//! on the real Monte Carlo workloads (weighted readout sampling and
//! stochastic trajectory averaging). Run with
//! `cargo bench -p qcorridor` (both backends compiled when the default
//! `parallel` feature is on).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qcorridor::ensemble::{sample_readouts, Proposal};
use qcorridor::exec;
use qcorridor::readout::sample_noise_path_on;
use qcorridor::stochastic::{derive_stream, propagate_stochastic};
use qcorridor::{MeasurementSpec, QuantumState, SystemSpec};

use std::f64::consts::PI;

fn monitored_pi_pulse() -> (SystemSpec, MeasurementSpec) {
    let sys = SystemSpec::two_level(1.0, 0.5, (0.0, PI)).unwrap();
    let t_r = sys.rabi_period();
    let kappa = 1.0 / (0.07 * t_r); // two-class monitoring point
    let meas = MeasurementSpec::new(kappa, 0.75 * t_r, 0.75 * t_r / 540.0, 1.0).unwrap();
    (sys, meas)
}

fn bench_readout_sampling(c: &mut Criterion) {
    let (sys, meas) = monitored_pi_pulse();
    let initial = QuantumState::basis_state(2, 0).unwrap();
    let mut group = c.benchmark_group("readout_sampling");
    for &n in &[64usize, 256] {
        group.bench_with_input(BenchmarkId::new("dispatch", n), &n, |b, &n| {
            b.iter(|| sample_readouts(&sys, &meas, n, 7, &initial, Proposal::Instrument).unwrap())
        });
    }
    group.finish();
}

fn bench_trajectory_batch(c: &mut Criterion) {
    let (sys, meas) = monitored_pi_pulse();
    let initial = QuantumState::basis_state(2, 0).unwrap();
    let job = |k: usize| {
        let noise = sample_noise_path_on(meas.grid(), derive_stream(11, k as u64));
        let run = propagate_stochastic(&sys, &meas, &noise, &initial, false).unwrap();
        *run.expectation_history.last().unwrap()
    };

    let mut group = c.benchmark_group("trajectory_batch");
    for &n in &[64usize, 256] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| exec::run_batch_sequential(n, job))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("rayon", n), &n, |b, &n| {
            b.iter(|| exec::run_batch_parallel(n, job))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_readout_sampling, bench_trajectory_batch);
criterion_main!(benches);
