//! Deterministic Monte-Carlo engine.
//!
//! Draws are split into fixed chunks of [`CHUNK`] samples. Chunk `i` owns the
//! ChaCha8 stream `(seed, i)`, accumulates its own Welford moments, and chunk
//! moments are merged in chunk order. The result is therefore bit-identical for
//! any worker count, including the sequential path.

pub mod verify;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::processes::{ProcessError, ProcessSpec, State};

/// Samples per deterministic chunk.
pub const CHUNK: usize = 4096;

pub type SimRng = ChaCha8Rng;

/// The generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: u64, value: f64 },
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("sample evaluation failed: {0}")]
    Sample(String),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, McError>;

/// How chunks are scheduled. Results never depend on the choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Data-parallel over chunks; `threads: None` uses the global pool.
    /// Runs sequentially when the crate is built without `parallel`.
    Parallel { threads: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: None }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn with_threads(threads: usize) -> Self {
        if threads <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel {
                threads: Some(threads),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

impl MCEstimate {
    /// `(mean - exact) / stderr`; zero stderr compares exactly.
    pub fn z_score(&self, exact: f64) -> f64 {
        let diff = self.mean - exact;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff.abs() <= 1e-12 * exact.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// Running mean and centered second moment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn into_estimate(self, seed: u64) -> MCEstimate {
        MCEstimate {
            mean: self.mean,
            stderr: (self.variance() / self.n as f64).sqrt(),
            n: self.n as usize,
            seed,
        }
    }
}

fn run_chunk<F>(chunk: usize, n: usize, seed: u64, sample: &F) -> Result<Welford>
where
    F: Fn(&mut SimRng) -> std::result::Result<f64, McError>,
{
    let start = chunk * CHUNK;
    let end = (start + CHUNK).min(n);
    let mut rng = stream_rng(seed, chunk as u64);
    let mut acc = Welford::default();
    for index in start..end {
        let v = sample(&mut rng)?;
        if !v.is_finite() {
            return Err(McError::NonFinite {
                index: index as u64,
                value: v,
            });
        }
        acc.push(v);
    }
    Ok(acc)
}

fn merge_in_order(parts: Vec<Result<Welford>>) -> Result<Welford> {
    let mut total = Welford::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

#[cfg(feature = "parallel")]
fn run_parallel<F>(chunks: usize, n: usize, seed: u64, threads: Option<usize>, sample: &F) -> Result<Welford>
where
    F: Fn(&mut SimRng) -> std::result::Result<f64, McError> + Sync,
{
    use rayon::prelude::*;
    let work = || {
        (0..chunks)
            .into_par_iter()
            .map(|c| run_chunk(c, n, seed, sample))
            .collect::<Vec<_>>()
    };
    let parts = match threads {
        None => work(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| McError::Pool(e.to_string()))?
            .install(work),
    };
    merge_in_order(parts)
}

/// Averages `n` draws of `sample`, each drawn from a chunk-owned generator.
pub fn estimate_with<F>(n: usize, seed: u64, exec: Execution, sample: F) -> Result<MCEstimate>
where
    F: Fn(&mut SimRng) -> std::result::Result<f64, McError> + Sync,
{
    if n < 2 {
        return Err(McError::TooFewSamples(n));
    }
    let chunks = n.div_ceil(CHUNK);
    let acc = match exec {
        Execution::Sequential => merge_in_order((0..chunks).map(|c| run_chunk(c, n, seed, &sample)).collect())?,
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } => run_parallel(chunks, n, seed, threads, &sample)?,
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => {
            merge_in_order((0..chunks).map(|c| run_chunk(c, n, seed, &sample)).collect())?
        }
    };
    Ok(acc.into_estimate(seed))
}

/// `E[f(X^x_t)]` by exact sampling of the transition over `[0, t]`.
pub fn estimate<F>(
    f: F,
    process: &ProcessSpec,
    x: &State,
    t: f64,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<MCEstimate>
where
    F: Fn(&State) -> f64 + Sync,
{
    process.validate()?;
    process.check_state(x)?;
    if t == 0.0 {
        let v = f(x);
        if !v.is_finite() {
            return Err(McError::NonFinite { index: 0, value: v });
        }
        if n < 2 {
            return Err(McError::TooFewSamples(n));
        }
        return Ok(MCEstimate {
            mean: v,
            stderr: 0.0,
            n,
            seed,
        });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(ProcessError::InvalidParameter(format!("horizon must be non-negative, got {t}")).into());
    }
    estimate_with(n, seed, exec, |rng| Ok(f(&process.sample_unchecked(x, t, rng))))
}

/// Two-sided z-threshold for `m` simultaneous checks at family-wise level 1e-3,
/// never below 4.
pub fn bonferroni_threshold(m: usize) -> f64 {
    let m = m.max(1) as f64;
    let q = crate::specfun::inverse_normal_cdf(1.0 - 1e-3 / (2.0 * m)).unwrap_or(f64::INFINITY);
    q.max(4.0)
}
