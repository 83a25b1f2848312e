//! Order-preserving parallel maps.
//!
//! Every helper returns results in input order and runs each item's closure
//! on exactly one thread, so outputs are identical for any thread count. With
//! the `parallel` feature disabled everything runs on the calling thread.

use serde::{Deserialize, Serialize};

/// Environment variable consulted by [`Parallelism::from_env`].
pub const THREADS_ENV: &str = "TRACKFUSE_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    /// Plain iterator on the calling thread.
    Sequential,
    /// Dedicated pool with this many workers.
    Threads(usize),
    /// Whatever pool the caller is currently running in.
    #[default]
    Auto,
}

impl Parallelism {
    /// `TRACKFUSE_THREADS=1` gives [`Parallelism::Sequential`], `N > 1` a pool of
    /// `N` workers, and anything else [`Parallelism::Auto`].
    pub fn from_env() -> Self {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .map(Self::from_threads)
            .unwrap_or_default()
    }

    pub fn from_threads(n: usize) -> Self {
        match n {
            0 => Parallelism::Auto,
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        }
    }
}

#[cfg(feature = "parallel")]
mod imp {
    use super::Parallelism;
    use rayon::prelude::*;
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    fn pool(threads: usize) -> Arc<rayon::ThreadPool> {
        static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
        let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
        pools
            .entry(threads)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(move |i| format!("trackfuse-{threads}-{i}"))
                        .build()
                        .expect("failed to build rayon pool"),
                )
            })
            .clone()
    }

    pub fn map<T, R, F>(par: Parallelism, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match par {
            Parallelism::Sequential => items.iter().map(f).collect(),
            Parallelism::Auto => items.par_iter().map(f).collect(),
            Parallelism::Threads(n) => pool(n).install(|| items.par_iter().map(f).collect()),
        }
    }

    pub fn map_range<R, F>(par: Parallelism, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match par {
            Parallelism::Sequential => (0..n).map(f).collect(),
            Parallelism::Auto => (0..n).into_par_iter().map(f).collect(),
            Parallelism::Threads(k) => pool(k).install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    use super::Parallelism;

    pub fn map<T, R, F>(_par: Parallelism, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(_par: Parallelism, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(par: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    imp::map(par, items, f)
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(par: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    imp::map_range(par, n, f)
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel_build() -> bool {
    cfg!(feature = "parallel")
}
