//! Job execution over independent work items.
//!
//! Results always come back in input order, so the worker count never
//! changes an output. With the `parallel` feature disabled, or with one
//! worker, everything runs on the calling thread.

#[derive(Debug)]
pub struct Executor {
    jobs: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// `jobs == 0` means one worker per available CPU.
    pub fn new(jobs: usize) -> Self {
        let jobs = if jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            jobs
        };
        #[cfg(feature = "parallel")]
        {
            let pool = (jobs > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .expect("thread pool")
            });
            Self { jobs, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Self { jobs }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Like [`map`](Self::map), stopping at the first error in input order.
    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent_of_jobs() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 7;
        assert_eq!(Executor::new(1).map(&xs, f), Executor::new(8).map(&xs, f));
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs: Vec<i32> = (0..100).collect();
        let r = Executor::new(4).try_map(&xs, |&x| if x % 30 == 29 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(29));
    }
}
