//! Sequential or thread-pool execution of independent jobs.

use bdg_core::critical::{classify, RegimeScan};
use bdg_core::oide::{Regime, RegimeThresholds, SolverParams};
use rayon::prelude::*;

use crate::error::Result;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "BDG_THREADS";

/// Runs jobs `0..n` and returns their results in index order, so the output does
/// not depend on the number of threads.
pub struct Runner {
    pool: Option<rayon::ThreadPool>,
}

impl Runner {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// `threads = 0` means available parallelism.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool: Some(pool) })
    }

    /// Thread count from `flag`, else from [`THREADS_ENV`], else available parallelism.
    pub fn configured(flag: Option<usize>) -> Result<Self> {
        let env = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok());
        Self::with_threads(flag.or(env).unwrap_or(0))
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl RegimeScan for Runner {
    fn classify_batch(&self, jobs: &[SolverParams], thresholds: &RegimeThresholds) -> Vec<bdg_core::Result<Regime>> {
        self.map(jobs.len(), |i| classify(&jobs[i], thresholds))
    }
}
