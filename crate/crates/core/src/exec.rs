//! Execution strategy for data-parallel loops.
//!
//! Heavy per-pixel / per-ray / per-cell loops run through [`map_chunks`],
//! which splits an index range into fixed chunks, evaluates them either
//! sequentially or on the rayon pool, and returns results in chunk order.
//! Because the merge order is fixed by chunk index, results are identical
//! between modes and across thread counts.

use std::ops::Range;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExecMode {
    /// Plain single-threaded loop.
    Sequential,
    /// Chunks distributed over the rayon thread pool.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}

/// Splits `0..n` into chunks of at most `chunk` items and maps `f` over the
/// chunk ranges. Results come back ordered by chunk index.
pub fn map_chunks<T, F>(mode: ExecMode, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(n))
        .collect();
    match mode {
        ExecMode::Sequential => ranges.into_iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
    }
}

/// Builds a rayon pool with `threads` workers (0 = all cores) and runs `f`
/// inside it. With the `parallel` feature disabled this just calls `f`.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("building rayon pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_are_ordered() {
        let out = map_chunks(ExecMode::Sequential, 10, 3, |r| r.start);
        assert_eq!(out, vec![0, 3, 6, 9]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let f = |r: Range<usize>| r.map(|i| (i as f64).sin()).sum::<f64>();
        let seq = map_chunks(ExecMode::Sequential, 1000, 7, f);
        let par = map_chunks(ExecMode::Parallel, 1000, 7, f);
        assert_eq!(seq, par);
    }
}
