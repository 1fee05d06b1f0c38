//! Data-parallel helpers with a sequential fallback.
//!
//! Only order-preserving maps and fixed-split reductions live here, so the
//! result never depends on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum slice length before elementwise work is split across threads.
pub const MIN_PARALLEL_LEN: usize = 1 << 14;

/// Ordered map over a slice.
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

/// Ordered map over an index range.
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

/// Elementwise map of one f32 slice, `f(index, value)`.
pub fn map_f32<F>(a: &[f32], f: F) -> Vec<f32>
where
    F: Fn(usize, f32) -> f32 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if a.len() >= MIN_PARALLEL_LEN {
        return a.par_iter().enumerate().map(|(i, &x)| f(i, x)).collect();
    }
    a.iter().enumerate().map(|(i, &x)| f(i, x)).collect()
}

/// Elementwise map of two equal-length f32 slices.
pub fn zip_map_f32<F>(a: &[f32], b: &[f32], f: F) -> Vec<f32>
where
    F: Fn(f32, f32) -> f32 + Sync + Send,
{
    assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if a.len() >= MIN_PARALLEL_LEN {
        return a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Index of the first element for which `pred` holds, if any.
pub fn position_f32<F>(a: &[f32], pred: F) -> Option<usize>
where
    F: Fn(f32) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if a.len() >= MIN_PARALLEL_LEN {
        return a.par_iter().position_first(|&x| pred(x));
    }
    a.iter().position(|&x| pred(x))
}

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise sum with split points that depend only on the length.
///
/// The recursion tree is the same whether or not the halves run on different
/// threads, so the result is bit-identical across worker counts.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    let (lo, hi) = xs.split_at(mid);
    let (a, b) = join(|| pairwise_sum(lo), || pairwise_sum(hi));
    a + b
}

pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// Runs `f` on a dedicated pool of `threads` workers. Without the `parallel`
/// feature this just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool")
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
