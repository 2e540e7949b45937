//! Thread-pool sizing. Parallel work in the crate is arranged so results do
//! not depend on the number of threads; `GEORECON_THREADS` only changes speed.

pub const THREADS_ENV: &str = "GEORECON_THREADS";

/// Threads requested through `GEORECON_THREADS`; 1 when unset or invalid.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

/// Runs `job` inside a pool of [`thread_count`] threads.
pub fn install<R: Send>(job: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(job),
        Err(e) => {
            log::warn!("could not build a thread pool ({e}); running on the caller's thread");
            job()
        }
    }
}
