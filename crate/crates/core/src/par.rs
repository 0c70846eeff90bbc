//! Index-parallel map used by per-node loops. Sequential unless the
//! `parallel` feature is on; results are identical either way.

use alloc::vec::Vec;

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

/// Calls `f(scratch, index, chunk)` on consecutive `chunk`-sized pieces of
/// `out`, with per-worker scratch from `init`.
#[cfg(feature = "parallel")]
pub(crate) fn chunks_init<S, I, F>(out: &mut [f64], chunk: usize, init: I, f: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each_init(init, |s, (i, c)| f(s, i, c));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn chunks_init<S, I, F>(out: &mut [f64], chunk: usize, init: I, f: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    let mut s = init();
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(&mut s, i, c);
    }
}

/// [`chunks_init`] over `rec`-sized records, scheduled in blocks so that
/// per-task overhead stays small when records are tiny.
pub(crate) fn records_init<S, I, F>(out: &mut [f64], rec: usize, init: I, f: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    const BLOCK: usize = 256;
    chunks_init(out, rec * BLOCK, init, |s, b, block| {
        for (j, r) in block.chunks_mut(rec).enumerate() {
            f(s, b * BLOCK + j, r);
        }
    });
}
