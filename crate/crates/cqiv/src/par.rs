//! Data-parallel map helper with a sequential fallback.
//!
//! Grid fits, bootstrap draws, and Monte Carlo replications are all
//! independent tasks indexed 0..n. With the `parallel` feature they run on
//! the rayon pool; without it the same closure runs sequentially. Results
//! come back in index order either way, so downstream aggregation is
//! bit-identical across both modes and any thread count.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
