//! Read-only fan-out over worker threads with order-preserving results.

use rayon::prelude::*;

/// Worker count from `TIPFORMER_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("TIPFORMER_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Maps `f` over `items` in parallel; output order matches input order.
pub fn par_map<T, R, Fun>(items: &[T], f: Fun) -> Vec<R>
where
    T: Sync,
    R: Send,
    Fun: Fn(&T) -> R + Sync + Send,
{
    match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}
