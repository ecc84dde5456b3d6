//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled work is split across the rayon pool;
//! without it every helper degrades to a plain loop. Each unit of work is
//! computed by exactly one closure call in a fixed internal order, so results
//! are bit-identical whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar operations a kernel stays on the calling thread.
pub const PAR_THRESHOLD: usize = 1 << 15;

/// Apply `f(row_index, row)` to every `row_len`-sized chunk of `out`.
#[inline]
pub fn for_each_row<T, F>(out: &mut [T], row_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if work >= PAR_THRESHOLD {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = work;
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Map `f` over `0..n`, collecting results in index order.
#[inline]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`map_indexed`] but short-circuits on the first error (by index order
/// of the returned error only when running sequentially).
pub fn try_map_indexed<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
