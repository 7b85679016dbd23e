//! Block-level execution: rayon when the `parallel` feature is enabled,
//! plain iteration otherwise.
//!
//! Every block draws from its own RNG stream, so the order in which blocks run
//! never affects results. `Execution::Serial` is always available, which is how
//! serial and parallel sweeps are compared bit for bit.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Apply `f` to every item, returning the first error in index order.
pub fn try_for_each_mut<T, E, F>(exec: Execution, items: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let results: Vec<Result<(), E>> = items
            .par_iter_mut()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect();
        return results.into_iter().collect();
    }
    let _ = exec;
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item)?;
    }
    Ok(())
}

pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    let _ = try_for_each_mut::<T, (), _>(exec, items, |i, item| {
        f(i, item);
        Ok(())
    });
}

/// Map over `0..n`, preserving order.
pub fn map_indices<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let mut a: Vec<u64> = (0..100).collect();
        let mut b = a.clone();
        for_each_mut(Execution::Serial, &mut a, |i, x| *x = *x * 3 + i as u64);
        for_each_mut(Execution::Parallel, &mut b, |i, x| *x = *x * 3 + i as u64);
        assert_eq!(a, b);
        assert_eq!(
            map_indices(Execution::Serial, 10, |i| i * i),
            map_indices(Execution::Parallel, 10, |i| i * i)
        );
    }

    #[test]
    fn first_error_in_index_order() {
        let mut v = vec![0u8; 10];
        let r = try_for_each_mut(Execution::Parallel, &mut v, |i, _| {
            if i == 3 || i == 7 {
                Err(i)
            } else {
                Ok(())
            }
        });
        assert_eq!(r, Err(3));
    }
}
