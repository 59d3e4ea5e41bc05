//! Data-parallel map primitive.
//!
//! Monte Carlo replications, bootstrap replicates, rate-experiment cells and
//! cross-fit folds all reduce to "evaluate an index-addressed pure function
//! over 0..len and collect the results in order". With the `parallel`
//! feature (on by default) that map fans out over rayon's thread pool;
//! without it, the same code runs sequentially on the calling thread.
//! Results come back in index order either way, so callers are bitwise
//! deterministic regardless of strategy or thread count.

/// Execution strategy for [`indexed_map`]. The benches compare the two
/// variants on identical workloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapStrategy {
    /// Run on the calling thread in index order.
    Sequential,
    /// Fan out over the rayon thread pool (requires the `parallel` feature).
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for MapStrategy {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        MapStrategy::Parallel
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        MapStrategy::Sequential
    }
}

/// Evaluates `f(0), f(1), ..., f(len-1)` under the given strategy and
/// returns the results in index order.
pub fn indexed_map<T, F>(strategy: MapStrategy, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match strategy {
        MapStrategy::Sequential => (0..len).map(f).collect(),
        #[cfg(feature = "parallel")]
        MapStrategy::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
    }
}

/// [`indexed_map`] under the default strategy (parallel when available).
pub fn indexed_map_default<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    indexed_map(MapStrategy::default(), len, f)
}
