//! Thin shim over rayon so every data-parallel loop has a sequential
//! fallback when the `parallel` feature is disabled. Outputs are collected
//! in index order, so results do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map_indices_init<W, U, I, F>(n: usize, init: I, f: F) -> Vec<U>
where
    W: Send,
    U: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> U + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map_init(&init, |w, i| f(w, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map_indices_init<W, U, I, F>(n: usize, init: I, f: F) -> Vec<U>
where
    W: Send,
    U: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> U + Sync + Send,
{
    let mut w = init();
    (0..n).map(|i| f(&mut w, i)).collect()
}

/// True when this build runs data-parallel loops on rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
