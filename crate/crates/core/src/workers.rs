use rayon::prelude::*;

use crate::error::{CspnError, Result};

/// Environment variable that overrides the default worker count.
pub const WORKERS_ENV: &str = "CSPN_WORKERS";

/// A fixed-size worker pool. Work is always split into the same units
/// regardless of the count, so results never depend on it.
pub struct Workers {
    count: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(CspnError::invalid("worker count must be at least 1"));
        }
        let pool = if count == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(count)
                    .build()
                    .map_err(|e| CspnError::invalid(e.to_string()))?,
            )
        };
        Ok(Workers { count, pool })
    }

    pub fn single() -> Self {
        Workers {
            count: 1,
            pool: None,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Applies `f(line_index, line)` to consecutive `line_len` chunks of `out`.
    pub fn for_each_line<F>(&self, out: &mut [f64], line_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if line_len == 0 {
            return;
        }
        match &self.pool {
            None => out
                .chunks_mut(line_len)
                .enumerate()
                .for_each(|(idx, line)| f(idx, line)),
            Some(pool) => pool.install(|| {
                out.par_chunks_mut(line_len)
                    .enumerate()
                    .for_each(|(idx, line)| f(idx, line))
            }),
        }
    }
}

/// Worker count from [`WORKERS_ENV`], falling back to the number of CPUs.
pub fn default_worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_workers_rejected() {
        assert!(Workers::new(0).is_err());
    }

    #[test]
    fn lines_identical_across_counts() {
        let fill = |idx: usize, line: &mut [f64]| {
            for (k, v) in line.iter_mut().enumerate() {
                *v = (idx * 13 + k) as f64 * 0.5;
            }
        };
        let mut a = vec![0.0; 120];
        let mut b = vec![0.0; 120];
        Workers::new(1).unwrap().for_each_line(&mut a, 12, fill);
        Workers::new(4).unwrap().for_each_line(&mut b, 12, fill);
        assert_eq!(a, b);
    }
}
