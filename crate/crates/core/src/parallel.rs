use rayon::prelude::*;

use crate::error::{IrisError, Result};

/// Maps `f` over `items` on a pool of `workers` threads, keeping input
/// order in the output. The first error (in input order) wins.
pub(crate) fn ordered_map<T, U, F>(workers: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| IrisError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}
