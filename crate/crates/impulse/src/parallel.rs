//! Thread-pool executor. Results come back in index order, so aggregates do
//! not depend on the worker count.

use impulse_core::Executor;
use rayon::prelude::*;

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `jobs = None` uses one worker per core.
    pub fn new(jobs: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = jobs {
            b = b.num_threads(j.max(1));
        }
        Ok(RayonExecutor { pool: b.build()? })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use impulse_core::Sequential;

    #[test]
    fn matches_sequential_order() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let a = RayonExecutor::new(Some(4)).unwrap().map(1000, f);
        assert_eq!(a, Sequential.map(1000, f));
    }
}
