//! Replica execution. Each replica draws from its own RNG substream, so the
//! output is identical under every execution mode.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// `threads == 0` uses the global pool.
    Parallel { threads: usize },
}

impl Execution {
    pub fn from_threads(threads: Option<usize>) -> Self {
        match threads {
            Some(1) => Execution::Sequential,
            Some(n) => Execution::Parallel { threads: n },
            None => Execution::Parallel { threads: 0 },
        }
    }
}

/// `(0..n).map(f)` with order preserved.
pub fn map_replicas<T, F>(exec: Execution, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel { threads } => parallel_map(threads, n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(threads: usize, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    if threads == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(_threads: usize, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Collects per-replica results, surfacing the first error.
pub fn try_map_replicas<T, E, F>(exec: Execution, n: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    map_replicas(exec, n, f).into_iter().collect()
}
