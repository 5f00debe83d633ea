//! Chunked data-parallel map over observation rows.
//!
//! Rows are cut into fixed-size chunks regardless of the thread count. Each
//! chunk produces a partial result and callers fold the partials in chunk
//! order, so the floating-point summation order (and therefore every result)
//! is the same with or without the `parallel` feature.

use std::ops::Range;

/// Rows per chunk.
pub const CHUNK_ROWS: usize = 1024;

pub(crate) fn chunk_ranges(n: usize) -> impl Iterator<Item = Range<usize>> + Clone {
    (0..n.div_ceil(CHUNK_ROWS)).map(move |c| c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n))
}

/// Applies `f` to each chunk of `0..n` and returns the partials in order.
#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let ranges: Vec<Range<usize>> = chunk_ranges(n).collect();
    if ranges.len() <= 1 {
        return ranges
            .into_iter()
            .enumerate()
            .map(|(c, r)| f(c, r))
            .collect();
    }
    ranges
        .into_par_iter()
        .enumerate()
        .map(|(c, r)| f(c, r))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(n).enumerate().map(|(c, r)| f(c, r)).collect()
}

/// Sums per-chunk scalar partials in chunk order.
pub(crate) fn sum_chunks<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    map_chunks(n, |_, r| f(r))
        .into_iter()
        .fold(0.0, |acc, v| acc + v)
}

/// Adds per-chunk vector partials elementwise in chunk order.
pub(crate) fn sum_chunk_vecs<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>) -> Vec<f64> + Sync + Send,
{
    let mut total = vec![0.0; len];
    for part in map_chunks(n, |_, r| f(r)) {
        debug_assert_eq!(part.len(), len);
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}
