//! Per-node map, parallel with the `parallel` feature.

use alloc::vec::Vec;

use crate::error::Result;

#[cfg(feature = "parallel")]
pub fn try_map<T, F>(items: &[usize], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(|&i| f(i)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map<T, F>(items: &[usize], f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    items.iter().map(|&i| f(i)).collect()
}
