//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature these dispatch to rayon; without it they are
//! plain iterator loops. Every reduction collects per-item or per-chunk
//! partial results in input order and folds them sequentially, so the
//! floating-point result does not depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default items per partial sum in [`chunked_sum`].
pub const REDUCTION_CHUNK: usize = 64;

/// Chunks evaluated concurrently before their partials are folded. Bounds
/// memory when partials are large.
const WAVE: usize = 256;

/// Applies `f` to every item, returning results in input order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Applies `f` to every item in place, returning results in input order.
pub fn map_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().map(f).collect()
    }
}

/// Applies `f` to `0..n`, returning results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
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

/// Sums per-chunk partials produced by `partial` over fixed-size chunks of
/// `items`. `partial` receives the chunk's starting offset and slice.
/// Partials are combined left to right with `add`, so the result depends only
/// on `chunk`, never on the thread count.
pub fn chunked_sum<T, A, P, F>(items: &[T], chunk: usize, zero: A, partial: P, add: F) -> A
where
    T: Sync,
    A: Send,
    P: Fn(usize, &[T]) -> A + Sync + Send,
    F: Fn(A, A) -> A,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..items.len()).step_by(chunk).collect();
    let mut acc = zero;
    for wave in starts.chunks(WAVE) {
        let parts = map(wave, |&start| {
            let end = (start + chunk).min(items.len());
            partial(start, &items[start..end])
        });
        acc = parts.into_iter().fold(acc, &add);
    }
    acc
}

/// Whether this build runs data-parallel loops on rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
