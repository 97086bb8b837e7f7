//! Thread-pool executor.

use parcrf_core::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};

/// Runs chunks on a dedicated rayon pool of fixed size.
pub struct Pool {
    pool: ThreadPool,
    workers: usize,
}

impl Pool {
    pub fn new(workers: usize) -> Result<Self, ThreadPoolBuildError> {
        let workers = workers.max(1);
        let pool = ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { pool, workers })
    }
}

/// Logical CPUs visible to this process.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Executor for Pool {
    fn workers(&self) -> usize {
        self.workers
    }

    fn run_chunks<T: Send>(&self, items: &mut [T], chunk_len: usize, f: &(dyn Fn(usize, &mut [T]) + Sync)) {
        let chunk_len = chunk_len.max(1);
        if self.workers == 1 || items.len() <= chunk_len {
            for (c, chunk) in items.chunks_mut(chunk_len).enumerate() {
                f(c * chunk_len, chunk);
            }
            return;
        }
        self.pool.install(|| {
            items
                .par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(c, chunk)| f(c * chunk_len, chunk));
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_chunk_runs_once() {
        let pool = Pool::new(3).unwrap();
        let mut xs = vec![0usize; 101];
        pool.run_chunks(&mut xs, 7, &|off, c| {
            for (k, v) in c.iter_mut().enumerate() {
                *v += off + k;
            }
        });
        assert!(xs.iter().enumerate().all(|(i, &v)| v == i));
    }
}
