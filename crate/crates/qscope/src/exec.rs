use qscope_core::montecarlo::Executor;
use rayon::prelude::*;
use rayon::ThreadPool;

/// Runs Monte Carlo jobs on a rayon pool; results keep job order, so
/// output does not depend on the thread count.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `None` uses one thread per core.
    pub fn new(jobs: Option<usize>) -> Self {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = jobs {
            b = b.num_threads(n.max(1));
        }
        RayonExecutor {
            pool: b.build().expect("thread pool"),
        }
    }
}

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}
