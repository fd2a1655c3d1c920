//! Sequential / data-parallel execution switch.
//!
//! Every data-parallel loop in the crate is written against [`Execution`].
//! With the `parallel` feature the [`Execution::Parallel`] variant dispatches
//! to rayon; without it only [`Execution::Sequential`] exists and the crate
//! carries no rayon dependency. Results are always returned in input order,
//! so the two modes produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// All modes compiled into this build.
    pub fn available() -> Vec<Execution> {
        #[allow(unused_mut)]
        let mut modes = vec![Execution::Sequential];
        #[cfg(feature = "parallel")]
        modes.push(Execution::Parallel);
        modes
    }

    pub fn name(self) -> &'static str {
        match self {
            Execution::Sequential => "sequential",
            #[cfg(feature = "parallel")]
            Execution::Parallel => "parallel",
        }
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
        }
    }

    pub fn try_map<T, U, E, F>(self, items: &[T], f: F) -> Result<Vec<U>, E>
    where
        T: Sync,
        U: Send,
        E: Send,
        F: Fn(&T) -> Result<U, E> + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
        }
    }

    /// Maps fixed-size chunks of `items`; used where per-item work is too
    /// small to schedule individually.
    pub fn map_chunks<T, U, F>(self, items: &[T], chunk: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T]) -> U + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            Execution::Sequential => items
                .chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
        }
    }

    /// Runs `op` with at most `threads` workers (0 means the rayon default).
    /// Used to bound the number of in-flight endpoint calls.
    pub fn bounded<R, F>(self, threads: usize, op: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = threads;
        match self {
            Execution::Sequential => op(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                if threads == 0 {
                    return op();
                }
                match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                    Ok(pool) => pool.install(op),
                    Err(e) => {
                        log::warn!("could not build bounded pool ({e}); using global pool");
                        op()
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..10_000).collect();
        let outputs: Vec<Vec<u64>> = Execution::available()
            .into_iter()
            .map(|m| m.map(&items, |x| x * x + 1))
            .collect();
        for out in &outputs {
            assert_eq!(out, &outputs[0]);
        }
        assert_eq!(outputs[0][3], 10);
    }

    #[test]
    fn chunks_report_offsets() {
        let items: Vec<u32> = (0..10).collect();
        for mode in Execution::available() {
            let offsets = mode.map_chunks(&items, 4, |off, c| (off, c.len()));
            assert_eq!(offsets, vec![(0, 4), (4, 4), (8, 2)]);
        }
    }

    #[test]
    fn try_map_propagates_error() {
        let items = [1, 2, 3];
        for mode in Execution::available() {
            let r: Result<Vec<i32>, String> =
                mode.try_map(&items, |&x| if x == 2 { Err("two".into()) } else { Ok(x) });
            assert_eq!(r, Err("two".to_string()));
        }
    }
}
