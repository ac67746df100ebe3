//! Execution strategy for embarrassingly parallel per-item work.
//!
//! Batch gradients, evaluation over test instances, and sweep cells all map
//! an independent function over a slice and then combine results in index
//! order. With the `parallel` feature (on by default) the map runs on the
//! rayon thread pool; reductions stay sequential and ordered, so results are
//! bitwise identical to sequential execution. [`Parallelism::Sequential`]
//! forces single-threaded maps regardless of the feature, for debugging and
//! for benchmark baselines.

use crate::error::Result;

/// How per-item work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    /// Map items on the rayon pool when the `parallel` feature is enabled;
    /// falls back to sequential when it is not.
    #[default]
    Parallel,
    /// Always map items one at a time on the calling thread.
    Sequential,
}

impl Parallelism {
    /// True when this mode will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Map `f` over `items`, returning outputs in input order.
pub fn ordered_map<T, U, F>(mode: Parallelism, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Fallible [`ordered_map`]; the first error (in item order) is returned.
pub fn ordered_try_map<T, U, F>(mode: Parallelism, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        let results: Vec<Result<U>> = items.par_iter().map(&f).collect();
        return results.into_iter().collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}
