//! Path-level parallel map with index-ordered output.

use crate::error::Result;

/// Evaluates `f(0..count)` on up to `workers` threads and returns the results in
/// index order. With the `parallel` feature disabled, or `workers <= 1`, runs
/// sequentially on the calling thread.
pub fn map_indexed<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    run_pool(count, workers, f)
}

#[cfg(feature = "parallel")]
fn run_pool<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use crate::error::Error;
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_pool<T, F>(count: usize, _workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_index_order() {
        let a = map_indexed(100, 1, |i| Ok(i * i)).unwrap();
        let b = map_indexed(100, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[9], 81);
    }

    #[test]
    fn errors_propagate() {
        use crate::error::Error;
        let r = map_indexed(10, 3, |i| {
            if i == 7 {
                Err(Error::domain("seven"))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }
}
