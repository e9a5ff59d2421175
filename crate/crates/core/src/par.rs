//! Small helpers over rayon for per-point loops.

use rayon::prelude::*;

/// Fill `out[i]` in parallel.
pub fn fill<T: Send>(out: &mut [T], f: impl Fn(usize, &mut T) + Sync + Send) {
    out.par_iter_mut().enumerate().for_each(|(i, slot)| f(i, slot));
}

/// Parallel map over an index range, preserving order.
pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}
