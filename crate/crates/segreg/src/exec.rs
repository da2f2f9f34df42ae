//! Data-parallel execution helpers with a sequential fallback.
//!
//! Every helper here produces bit-identical results no matter how many
//! threads run it: element-wise work writes to disjoint chunks, and
//! reductions accumulate fixed-size blocks in index order. The `parallel`
//! feature selects rayon; without it the same blocked loops run on one
//! thread. [`set_parallelism`] switches between the two code paths at
//! runtime (used by the benchmarks and the `--threads 1` CLI flag).

use std::sync::atomic::{AtomicBool, Ordering};

/// Block length for chunked maps and reductions. Fixed so that the
/// floating-point association is independent of the thread count.
pub const BLOCK: usize = 4096;

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon code paths process-wide.
///
/// With the `parallel` feature off this is a no-op; everything is
/// sequential. Outputs are identical either way.
pub fn set_parallelism(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
}

/// True when the rayon code paths are compiled in and enabled.
pub fn parallelism_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Run `f` with parallelism disabled, restoring the previous setting.
pub fn run_sequential<R>(f: impl FnOnce() -> R) -> R {
    let before = PARALLEL_ENABLED.swap(false, Ordering::Relaxed);
    let out = f();
    PARALLEL_ENABLED.store(before, Ordering::Relaxed);
    out
}

/// Fill `out` by calling `f(i)` for every index.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    fill_chunks(out, |start, chunk| {
        for (j, slot) in chunk.iter_mut().enumerate() {
            *slot = f(start + j);
        }
    });
}

/// Apply `f(start, chunk)` over consecutive `BLOCK`-sized chunks of `out`.
pub fn fill_chunks<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    #[cfg(feature = "parallel")]
    if parallelism_enabled() {
        use rayon::prelude::*;
        out.par_chunks_mut(BLOCK)
            .enumerate()
            .for_each(|(b, chunk)| f(b * BLOCK, chunk));
        return;
    }
    for (b, chunk) in out.chunks_mut(BLOCK).enumerate() {
        f(b * BLOCK, chunk);
    }
}

/// Run `f(i, row)` over disjoint rows of length `row_len`.
pub fn fill_rows<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert!(row_len > 0 && out.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    if parallelism_enabled() {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Deterministic sum of `f(i)` for `i in 0..n`.
///
/// Partial sums are taken over fixed `BLOCK` ranges and folded in block
/// order, so the result does not depend on the thread count.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let nblocks = n.div_ceil(BLOCK);
    let block_sum = |b: usize| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    };

    #[cfg(feature = "parallel")]
    if parallelism_enabled() {
        use rayon::prelude::*;
        let partials: Vec<f64> = (0..nblocks).into_par_iter().map(block_sum).collect();
        return partials.iter().sum();
    }
    (0..nblocks).map(block_sum).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_association() {
        let n = 3 * BLOCK + 17;
        let vals: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 7.0).collect();
        let par = sum(n, |i| vals[i]);
        let seq = run_sequential(|| sum(n, |i| vals[i]));
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn fill_matches_sequential() {
        let n = 2 * BLOCK + 5;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        fill(&mut a, |i| (i as f64).sin());
        run_sequential(|| fill(&mut b, |i| (i as f64).sin()));
        assert_eq!(a, b);
    }
}
