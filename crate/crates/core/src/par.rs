//! Data-parallel helpers. With the `parallel` feature these fan out over
//! rayon's pool; without it they run in order on the calling thread.

/// `f(0), f(1), .., f(n-1)`, returned in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sizes the global worker pool; `0` keeps one worker per core. Must run
/// before the first parallel call.
#[cfg(feature = "parallel")]
pub fn configure_threads(jobs: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| crate::Error::InvalidArgument(format!("cannot size worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_jobs: usize) -> crate::Result<()> {
    Ok(())
}

/// Whether this build fans out across threads.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
