use rayon::prelude::*;

use cursor_attn_core::train::Executor;

/// Executor backed by the current rayon pool. Job results come back in index
/// order, so output never depends on the number of threads.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn run<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..jobs).into_par_iter().map(f).collect()
    }
}

/// Run `f` inside a pool of `jobs` threads (0 = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
