//! Chunked Monte-Carlo reductions.
//!
//! Sample indices are cut into fixed-size chunks; each chunk is reduced on
//! its own and the chunk results are merged in index order. The chunk size
//! never depends on the thread count, so parallel and sequential runs give
//! bit-identical sums.

use std::cell::Cell;
use std::ops::Range;

use crate::error::Result;

pub const CHUNK_SIZE: usize = 2048;
const MAX_VARS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

thread_local! {
    static OVERRIDE: Cell<Option<Execution>> = const { Cell::new(None) };
}

/// Runs `f` with every reduction dispatched from this thread using `exec`.
pub fn with_execution<R>(exec: Execution, f: impl FnOnce() -> R) -> R {
    let prev = OVERRIDE.with(|c| c.replace(Some(exec)));
    let out = f();
    OVERRIDE.with(|c| c.set(prev));
    out
}

pub fn current_execution() -> Execution {
    OVERRIDE.with(|c| c.get()).unwrap_or_default()
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK_SIZE)).map(|c| c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(n)).collect()
}

/// Evaluates `f` on every chunk of `0..n`, returning results in chunk order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    let ranges = chunks(n);
    match current_execution() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
        _ => ranges.into_iter().map(f).collect(),
    }
}

/// Running mean and co-moment matrix of a `k`-variate sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    n: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl Moments {
    pub fn new(k: usize) -> Self {
        assert!(k <= MAX_VARS, "Moments tracks at most {MAX_VARS} variables");
        Self { n: 0, mean: vec![0.0; k], comoment: vec![0.0; k * k] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let k = self.dim();
        debug_assert_eq!(x.len(), k);
        self.n += 1;
        let n = self.n as f64;
        let mut delta = [0.0f64; MAX_VARS];
        for i in 0..k {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..k {
            let after = x[i] - self.mean[i];
            for j in 0..k {
                self.comoment[i * k + j] += delta[j] * after;
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        let k = self.dim();
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = (0..k).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..k {
            for j in 0..k {
                self.comoment[i * k + j] += other.comoment[i * k + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..k {
            self.mean[i] += delta[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Unbiased sample covariance of variables `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.comoment[i * self.dim() + j] / (self.n as f64 - 1.0)
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance(i, i).max(0.0)
    }

    /// Standard error of the mean of variable `i`.
    pub fn std_error(&self, i: usize) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance(i) / self.n as f64).sqrt()
    }

    /// Covariance between the sample means of variables `i` and `j`.
    pub fn mean_covariance(&self, i: usize, j: usize) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.covariance(i, j) / self.n as f64
    }
}

/// Reduces `n` draws into [`Moments`] of `k` per-draw statistics.
///
/// `per_chunk` receives a chunk range and an empty accumulator to fill.
pub fn accumulate<F>(n: usize, k: usize, per_chunk: F) -> Result<Moments>
where
    F: Fn(Range<usize>, &mut Moments) -> Result<()> + Sync + Send,
{
    let parts = map_chunks(n, |range| {
        let mut m = Moments::new(k);
        per_chunk(range, &mut m)?;
        Ok(m)
    })?;
    let mut total = Moments::new(k);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}
