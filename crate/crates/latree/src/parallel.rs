//! Deterministic parallel reduction. Work is split into fixed-size chunks
//! whose boundaries depend only on the input length, each chunk is reduced
//! sequentially, and the per-chunk results are folded in chunk order. The
//! result is bit-identical for any number of worker threads.

use rayon::prelude::*;

const CHUNK: usize = 256;

/// Map each chunk of `items` with `map` and fold the chunk results in order.
pub fn chunked_fold<T, A, M, F>(items: &[T], map: M, init: A, fold: F) -> A
where
    T: Sync,
    A: Send,
    M: Fn(&[T]) -> A + Sync,
    F: Fn(A, A) -> A,
{
    let partials: Vec<A> = items.par_chunks(CHUNK).map(&map).collect();
    partials.into_iter().fold(init, fold)
}

/// Weighted sum of `f` over items, reduced deterministically.
pub fn chunked_sum<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync,
{
    chunked_fold(
        items,
        |chunk| chunk.iter().map(&f).sum::<f64>(),
        0.0,
        |a, b| a + b,
    )
}
