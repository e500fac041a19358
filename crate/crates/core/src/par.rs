//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon pool; without it (or under [`Execution::Sequential`]) they run on
//! the calling thread. Results keep input order either way, so outputs are
//! identical across modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent jobs is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when jobs will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_with(Execution::default(), items, f)
}

pub fn map_with<T, U, F>(mode: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Applies `f` to every element in place.
pub fn for_each_mut<T, F>(mode: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = mode;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Maps `f` over `0..n` and concatenates the resulting vectors in index order.
pub fn flat_map_range<U, F>(mode: Execution, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> Vec<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().flat_map_iter(f).collect();
    }
    let _ = mode;
    (0..n).flat_map(f).collect()
}
