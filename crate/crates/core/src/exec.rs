//! Execution backends for the element/edge loops.
//!
//! Results are collected in index order, so the parallel backend produces a
//! vector that is bitwise identical to the sequential one; any subsequent
//! reduction happens sequentially in the caller.

/// Maps `f` over `0..n`, collecting results in index order. Runs on the
/// rayon pool when the `parallel` feature is enabled.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential variant, kept for determinism checks and benchmarks.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
