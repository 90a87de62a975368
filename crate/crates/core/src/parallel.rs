//! Data-parallel map with a sequential fallback. The `parallel` feature
//! (default) routes through rayon; without it everything runs in order on
//! one thread. Results always come back in input order, and all RNG
//! streams are keyed by content, so both paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    seq_map(items, f)
}

/// Always-sequential map, kept callable for direct comparison benchmarks.
pub fn seq_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Run `f` inside a rayon pool of the given width (0 = default). Without
/// the `parallel` feature the width is ignored.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R>(_workers: usize, f: impl FnOnce() -> R) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_agree_in_order() {
        let items: Vec<u64> = (0..64).collect();
        let f = |x: u64| x * x + 1;
        assert_eq!(par_map(items.clone(), f), seq_map(items, f));
    }
}
