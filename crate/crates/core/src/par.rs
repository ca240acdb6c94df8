//! Deterministic data-parallel maps.
//!
//! All parallelism in the crate goes through [`map_ordered`]: the input is cut
//! into fixed-size chunks, each chunk is mapped (possibly on rayon worker
//! threads), and results are collected back in input order. Chunk boundaries
//! depend only on the input length, never on thread count, so the parallel and
//! sequential paths produce bit-identical output and reductions over the result
//! stay deterministic.

/// Execution strategy for the heavy loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Plain sequential iteration.
    Sequential,
    /// Rayon work-stealing over fixed chunks (`parallel` feature).
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

/// Maps `f` over `items`, preserving order. The result is independent of the
/// chosen [`Parallelism`].
pub fn map_ordered<I, T, F>(mode: Parallelism, items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => items.into_iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
    }
}

/// Maps `f` over index ranges `[start, end)` covering `0..len` in fixed chunks
/// of `chunk` items, then folds the chunk results in chunk order. Used for
/// deterministic parallel reductions (e.g. batch gradient accumulation).
pub fn fold_chunks<T, F, G>(mode: Parallelism, len: usize, chunk: usize, map: F, mut fold: G) -> Option<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
    G: FnMut(T, T) -> T,
{
    assert!(chunk > 0, "chunk size must be positive");
    let ranges: Vec<(usize, usize)> = (0..len)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(len)))
        .collect();
    let parts = map_ordered(mode, ranges, |(s, e)| map(s, e));
    let mut it = parts.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut fold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_sequential_preserves_order() {
        let out = map_ordered(Parallelism::Sequential, vec![3usize, 1, 2], |x| x * 10);
        assert_eq!(out, vec![30, 10, 20]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        let items: Vec<u64> = (0..257).collect();
        let f = |x: u64| (x as f64).sin() * 1e6;
        let seq = map_ordered(Parallelism::Sequential, items.clone(), f);
        let par = map_ordered(Parallelism::Rayon, items, f);
        assert_eq!(seq.len(), par.len());
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fold_chunks_is_chunk_ordered() {
        // Sum floats in fixed chunk order; result must not depend on mode.
        let vals: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let sum_range = |s: usize, e: usize| vals[s..e].iter().sum::<f64>();
        let seq = fold_chunks(Parallelism::Sequential, vals.len(), 64, sum_range, |a, b| a + b).unwrap();
        #[cfg(feature = "parallel")]
        {
            let par = fold_chunks(Parallelism::Rayon, vals.len(), 64, sum_range, |a, b| a + b).unwrap();
            assert_eq!(seq.to_bits(), par.to_bits());
        }
        let _ = seq;
    }

    #[test]
    fn fold_chunks_empty_is_none() {
        let r: Option<f64> = fold_chunks(Parallelism::Sequential, 0, 8, |_, _| 0.0, |a, b| a + b);
        assert!(r.is_none());
    }
}
