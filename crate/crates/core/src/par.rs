//! Data-parallel helpers for per-node loops and independent runs.
//!
//! With the `parallel` feature (default) node maps above a small size are
//! split across the rayon pool; without it everything runs on the calling
//! thread. Results are always collected in index order and any reductions
//! happen afterwards, so outputs do not depend on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many nodes the rayon split costs more than it saves.
#[cfg(feature = "parallel")]
const PAR_MIN_NODES: usize = 256;
#[cfg(feature = "parallel")]
const PAR_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Evaluates `f(i)` for `i in 0..n`, returning the results in order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if n >= PAR_MIN_NODES => (0..n)
                .into_par_iter()
                .with_min_len(PAR_CHUNK)
                .map(f)
                .collect(),
            _ => (0..n).map(f).collect(),
        }
    }
}

/// Runs independent jobs (parameter sweeps, refinement studies) concurrently.
pub fn run_many<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
