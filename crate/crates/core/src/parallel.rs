//! Scoped worker pools. Every parallel loop in the crate produces the same
//! output for any worker count, so the pool size only affects wall time.

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `workers` threads (0 means the rayon
/// default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
