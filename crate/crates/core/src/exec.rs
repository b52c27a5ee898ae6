//! Sequential / data-parallel execution of per-item work.
//!
//! Batch stages (retrieval scans, sentence scoring, per-query evaluation) are
//! expressed as ordered maps over immutable inputs, so they can run on a rayon
//! pool or sequentially with identical results. The `parallel` feature gates
//! the rayon dependency; without it every mode degrades to sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon pool with the given thread count; 0 means rayon's default.
    Workers(usize),
}

impl Parallelism {
    /// Resolve a worker-count config value: 1 → sequential, n → pool of n,
    /// 0 → pool with rayon's default sizing.
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Workers(workers)
        }
    }
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map_ordered<T, U, F>(mode: Parallelism, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Workers(0) => items.par_iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Workers(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("failed to build rayon pool");
            pool.install(|| items.par_iter().map(f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        Parallelism::Workers(_) => {
            log::warn!("built without the `parallel` feature; running sequentially");
            items.iter().map(f).collect()
        }
    }
}

/// Run two closures, concurrently when the pool is available.
pub fn join2<A, B, FA, FB>(mode: Parallelism, fa: FA, fb: FB) -> (A, B)
where
    A: Send,
    B: Send,
    FA: FnOnce() -> A + Send,
    FB: FnOnce() -> B + Send,
{
    match mode {
        Parallelism::Sequential => (fa(), fb()),
        #[cfg(feature = "parallel")]
        Parallelism::Workers(_) => rayon::join(fa, fb),
        #[cfg(not(feature = "parallel"))]
        Parallelism::Workers(_) => (fa(), fb()),
    }
}
