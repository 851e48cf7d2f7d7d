//! Ensemble execution strategy.
//!
//! Trajectory batches are embarrassingly parallel: every job owns its RNG
//! stream (derived from the master seed and the trajectory index) and results
//! are collected in index order, so the output is identical whichever backend
//! runs it. With the `parallel` feature (on by default) batches run on the
//! rayon pool; without it they run on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cap the worker pool at `n` threads. Must be called before the first
/// parallel batch; later calls report an error. Without the `parallel`
/// feature this is a no-op (everything already runs on one thread).
pub fn configure_thread_pool(n: usize) -> std::result::Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

/// Run `job(0..n)` with the default backend, collecting in index order.
pub fn run_batch<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(n, job)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(n, job)
    }
}

/// Sequential fallback; always available.
pub fn run_batch_sequential<T, F>(n: usize, job: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(job).collect()
}

/// Rayon-backed batch runner.
#[cfg(feature = "parallel")]
pub fn run_batch_parallel<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).into_par_iter().map(job).collect()
}
