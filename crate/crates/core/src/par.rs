//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work into independent units whose results are
//! combined in index order, so the output is bitwise identical whether the
//! units run on the rayon pool or in a plain loop. Parallel execution needs
//! the `parallel` feature and can be switched off at runtime (the benches
//! compare both paths this way).

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Units of scalar work below which splitting is not worth a pool dispatch.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
fn go_parallel(units: usize, work: usize) -> bool {
    units > 1 && work >= MIN_PARALLEL_WORK && parallel_enabled()
}

/// `(0..n).map(f).collect()`, possibly on the pool. `work` is a rough
/// scalar-operation estimate for the whole call.
pub fn map_range<R, F>(n: usize, work: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(n, work) {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` for each `chunk`-sized piece of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if go_parallel(data.len() / chunk, work) {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = work;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}
