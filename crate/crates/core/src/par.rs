//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature every helper runs on the rayon pool unless the
//! calling thread is inside [`sequential`]. Results are always returned in
//! input order, so callers see identical output on either path.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

struct Restore(bool);

impl Drop for Restore {
    fn drop(&mut self) {
        FORCE_SEQUENTIAL.with(|flag| flag.set(self.0));
    }
}

/// Runs `f` with every helper in this module pinned to the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let _restore = Restore(FORCE_SEQUENTIAL.with(|flag| flag.replace(true)));
    f()
}

/// Whether helpers called from this thread will fan out.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

/// Sizes the global pool. Only the first call has any effect; `jobs == 0`
/// keeps rayon's default.
pub fn configure_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}

/// Order-preserving map.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map that also passes the item index.
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Fold chunks into accumulators, then combine them.
///
/// `reduce` must be associative and commutative for the result to be
/// independent of how rayon splits the input (sums of counts are).
pub fn fold_reduce<T, A, Id, Fo, Re>(items: &[T], identity: Id, fold: Fo, reduce: Re) -> A
where
    T: Sync,
    A: Send,
    Id: Fn() -> A + Sync + Send,
    Fo: Fn(A, &T) -> A + Sync + Send,
    Re: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items
            .par_iter()
            .fold(&identity, &fold)
            .reduce(&identity, &reduce);
    }
    let _ = &reduce;
    items.iter().fold(identity(), fold)
}
