//! Data-parallel map helpers with a sequential fallback.
//!
//! Every parallel loop in this crate assigns one output cell to exactly one
//! task and accumulates within a cell in a fixed order, so results are
//! bit-identical across thread counts and across the `parallel` feature.

/// Fill a vector of length `len` from an index function, sequentially.
pub(crate) fn fill_indexed_seq<F>(len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64,
{
    (0..len).map(f).collect()
}

/// Fill a vector of length `len` from an index function, on the thread pool
/// when the `parallel` feature is enabled and `parallel` is true.
pub(crate) fn fill_indexed<F>(len: usize, parallel: bool, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    fill_indexed_seq(len, f)
}
