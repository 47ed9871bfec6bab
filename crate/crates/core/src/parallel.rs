//! Order-preserving fan-out over scoped threads.

use std::num::NonZeroUsize;

/// Environment variable capping worker threads; unset or `0` means one per core.
pub const THREADS_ENV: &str = "JUNCNET_THREADS";

pub fn worker_threads() -> usize {
    let auto = || std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(0) | None => auto(),
        Some(n) => n,
    }
}

/// Maps `f` over `items` using up to `threads` threads. Each thread takes a
/// contiguous chunk and results come back in input order, so the output does
/// not depend on the thread count.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}
