//! Deterministic data-parallel helpers.
//!
//! Work is split into fixed-size chunks; each chunk is reduced on its own and
//! the per-chunk partials are folded left to right. The chunk boundaries do
//! not depend on the thread count, so [`Execution::Parallel`] and
//! [`Execution::Sequential`] return bit-identical values.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per reduction chunk.
pub const CHUNK: usize = 64;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when compiled with the `parallel` feature, otherwise
    /// identical to `Sequential`.
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

/// Maps every chunk of `items` through `map` and folds the partial results
/// in chunk order. Returns `None` for empty input.
pub fn chunked_reduce<T, A, M, R>(exec: Execution, items: &[T], map: M, reduce: R) -> Option<A>
where
    T: Sync,
    A: Send,
    M: Fn(&[T]) -> A + Sync + Send,
    R: Fn(A, A) -> A,
{
    let partials: Vec<A> = match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_chunks(CHUNK).map(&map).collect(),
        _ => items.chunks(CHUNK).map(&map).collect(),
    };
    partials.into_iter().reduce(reduce)
}

/// Order-preserving map over `items`.
pub fn map_collect<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(&f).collect(),
        _ => items.iter().map(&f).collect(),
    }
}
