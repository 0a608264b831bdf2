//! Execution policy for the data-parallel loops of the crate.
//!
//! Every hot loop that is embarrassingly parallel (per-edge solves, parameter
//! sweeps, batches of independent runs) takes an [`Exec`]. With the
//! `parallel` feature disabled `Exec::Parallel` silently degrades to the
//! sequential path, so callers never need their own `cfg` switches.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this policy actually fans out work on this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Applies `f` to every element with its index.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }

    /// Sums `f` over `0..n`. The parallel reduction order is fixed by rayon's
    /// splitting, so results may differ from the sequential sum in the last bits.
    pub fn sum_range<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).sum();
        }
        (0..n).map(f).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<usize> = (0..1000).collect();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let ys = exec.map(&xs, |x| x * 2);
            assert!(ys.iter().enumerate().all(|(i, &y)| y == 2 * i));
        }
    }

    #[test]
    fn for_each_mut_touches_everything() {
        let mut xs = vec![0usize; 257];
        Exec::Parallel.for_each_mut(&mut xs, |i, x| *x = i + 1);
        assert_eq!(xs.iter().sum::<usize>(), 257 * 258 / 2);
    }
}
