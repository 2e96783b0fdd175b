//! Execution policy for the data-parallel kernels.
//!
//! Work over sample sets and tensor slabs is split into fixed-size chunks and
//! partial results are combined in chunk order, so the parallel and
//! sequential paths produce bit-identical output.

use std::ops::Range;
use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

const UNSET: u8 = 0;
const SEQ: u8 = 1;
const PAR: u8 = 2;

static OVERRIDE: AtomicU8 = AtomicU8::new(UNSET);

/// Chunk length used by every chunked kernel. Fixed so results do not depend
/// on the thread count.
pub const CHUNK: usize = 2048;

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Policy used by kernels that are not given one explicitly.
pub fn current() -> Exec {
    match OVERRIDE.load(Ordering::Relaxed) {
        SEQ => Exec::Sequential,
        PAR => Exec::Parallel,
        _ => Exec::default(),
    }
}

/// Process-wide override, mainly for benchmarks comparing both paths.
pub fn set_current(exec: Option<Exec>) {
    let v = match exec {
        None => UNSET,
        Some(Exec::Sequential) => SEQ,
        Some(Exec::Parallel) => PAR,
    };
    OVERRIDE.store(v, Ordering::Relaxed);
}

fn chunks(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(n)).collect()
}

/// Applies `f` to consecutive ranges covering `0..n` and returns the results
/// in range order.
pub fn map_chunks<T, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(n, chunk);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
        _ => ranges.into_iter().map(f).collect(),
    }
}

/// Fills `out` chunk by chunk; `f` receives the global offset of its slice.
pub fn fill_chunks<F>(exec: Exec, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk).enumerate().for_each(|(c, s)| f(c * chunk, s));
        }
        _ => out.chunks_mut(chunk).enumerate().for_each(|(c, s)| f(c * chunk, s)),
    }
}

/// Sums per-chunk vectors in chunk order.
pub fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}
