//! Feature-gated parallel map helpers.
//!
//! Only order-preserving maps go through here; every reduction in the crate
//! stays sequential so results are identical with and without the
//! `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Maps `f` over consecutive `width`-sized chunks of `data`, in order.
pub(crate) fn map_chunks<U, F>(data: &[f64], width: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize, &[f64]) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_exact(width)
            .enumerate()
            .map(|(i, chunk)| f(i, chunk))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_exact(width)
            .enumerate()
            .map(|(i, chunk)| f(i, chunk))
            .collect()
    }
}

/// Runs `f` over consecutive `width`-sized chunks of `data` in place.
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_exact_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_exact_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
}
