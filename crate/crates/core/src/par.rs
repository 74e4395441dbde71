//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over rayon's global
//! pool; without it the same code runs on the calling thread. Reductions use
//! a fixed chunk size and combine partial sums in chunk order, so the result
//! is bit-identical regardless of feature or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per partial sum in [`chunked_sum`].
pub const CHUNK: usize = 16;

/// Apply `f` to every index in `0..n`, preserving order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Apply `f` to each item of a slice, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
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

/// Sum `f(chunk, acc)` contributions into a vector of length `len`.
///
/// `f` receives a contiguous chunk of `items` and a zeroed accumulator, and
/// returns a scalar (typically the chunk loss). Returns the total scalar and
/// the summed accumulator.
pub fn chunked_sum<I, F>(items: &[I], len: usize, f: F) -> (f64, Vec<f64>)
where
    I: Sync,
    F: Fn(&[I], &mut [f64]) -> f64 + Sync + Send,
{
    let run = |chunk: &[I]| {
        let mut acc = vec![0.0; len];
        let s = f(chunk, &mut acc);
        (s, acc)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, Vec<f64>)> = items.par_chunks(CHUNK).map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, Vec<f64>)> = items.chunks(CHUNK).map(run).collect();

    let mut total = 0.0;
    let mut acc = vec![0.0; len];
    for (s, part) in parts {
        total += s;
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += p;
        }
    }
    (total, acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_serial_order() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let (s, acc) = chunked_sum(&xs, 2, |chunk, acc| {
            for x in chunk {
                acc[0] += x;
                acc[1] += x * x;
            }
            chunk.iter().sum()
        });
        let mut expect = 0.0;
        for c in xs.chunks(CHUNK) {
            expect += c.iter().sum::<f64>();
        }
        assert_eq!(s, expect);
        assert!((acc[0] - s).abs() < 1e-12);
    }

    #[test]
    fn map_range_preserves_order() {
        assert_eq!(map_range(5, |i| i * 2), vec![0, 2, 4, 6, 8]);
    }
}
