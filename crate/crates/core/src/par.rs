//! Replica-level data parallelism.
//!
//! With the `parallel` feature (default) replica loops run on the rayon pool;
//! without it everything falls back to a plain sequential loop. Output order is
//! always replica order, and each replica's work depends only on its index.

use crate::error::Result;

/// How an ensemble loop is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Parallel when the `parallel` feature is compiled in, else sequential.
    #[default]
    Auto,
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        match self {
            Execution::Auto => cfg!(feature = "parallel"),
            Execution::Sequential => false,
            #[cfg(feature = "parallel")]
            Execution::Parallel => true,
        }
    }
}

/// `(0..n).map(f)` collected in index order, scheduled per `exec`.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub fn try_map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, exec, f).into_iter().collect()
}
