//! Sequential or rayon-backed mapping over independent pose states.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[derive(Clone, Default)]
enum Mode {
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
    #[default]
    Global,
}

/// How a batch is spread over threads. Results never depend on it.
#[derive(Clone, Default)]
pub struct Execution {
    mode: Mode,
}

impl std::fmt::Debug for Execution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match &self.mode {
            Mode::Sequential => "sequential".to_string(),
            #[cfg(feature = "parallel")]
            Mode::Pool(p) => format!("pool({})", p.current_num_threads()),
            Mode::Global => "global".to_string(),
        };
        f.write_str(&name)
    }
}

impl Execution {
    pub fn sequential() -> Self {
        Self { mode: Mode::Sequential }
    }

    /// Dedicated pool of `jobs` workers, or the global pool when `None`.
    /// Without the `parallel` feature this is sequential.
    pub fn parallel(jobs: Option<usize>) -> Self {
        #[cfg(feature = "parallel")]
        {
            match jobs {
                Some(1) => Self::sequential(),
                Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => Self {
                        mode: Mode::Pool(Arc::new(pool)),
                    },
                    Err(e) => {
                        log::warn!("thread pool of {n} failed ({e}), using the global pool");
                        Self { mode: Mode::Global }
                    }
                },
                None => Self { mode: Mode::Global },
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = jobs;
            Self::sequential()
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.mode {
            Mode::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Mode::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
            #[cfg(feature = "parallel")]
            Mode::Global => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            Mode::Global => items.iter().map(f).collect(),
        }
    }
}
