//! Per-sample parallelism with results that do not depend on thread count.
//!
//! Work is split into fixed-size chunks of [`CHUNK`] items. Each chunk owns
//! one accumulator and processes its items in order; chunks are folded in
//! index order by the caller. Changing the number of threads changes only
//! which thread runs a chunk, never the arithmetic.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::error::Result;

pub const CHUNK: usize = 4;

static THREADS: AtomicUsize = AtomicUsize::new(0);
static ENV_THREADS: OnceLock<usize> = OnceLock::new();

/// Worker count: an explicit [`set_threads`] call wins, then
/// `SEQSCRIPT_THREADS`, then 1.
pub fn threads() -> usize {
    match THREADS.load(Ordering::Relaxed) {
        0 => *ENV_THREADS.get_or_init(|| {
            std::env::var("SEQSCRIPT_THREADS")
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&n| n > 0)
                .unwrap_or(1)
        }),
        n => n,
    }
}

pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

/// `f(i)` for `i in 0..n`, results in index order.
pub fn map<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let (out, _) = map_accumulate(n, || (), |i, _| f(i))?;
    Ok(out)
}

/// Like [`map`], but every chunk also threads a private accumulator through
/// its items. Returns per-item results and per-chunk accumulators, both in
/// order.
pub fn map_accumulate<A, R, I, F>(n: usize, init: I, f: F) -> Result<(Vec<R>, Vec<A>)>
where
    A: Send,
    R: Send,
    I: Fn() -> A + Sync,
    F: Fn(usize, &mut A) -> Result<R> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let run_chunk = |c: usize| -> Result<(Vec<R>, A)> {
        let mut acc = init();
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let rs = (lo..hi).map(|i| f(i, &mut acc)).collect::<Result<Vec<_>>>()?;
        Ok((rs, acc))
    };

    let workers = threads().min(chunks.max(1));
    let done: Vec<Result<(Vec<R>, A)>> = if workers <= 1 {
        (0..chunks).map(run_chunk).collect()
    } else {
        let mut slots: Vec<Option<Result<(Vec<R>, A)>>> = (0..chunks).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|wk| {
                    let run_chunk = &run_chunk;
                    s.spawn(move || (wk..chunks).step_by(workers).map(|c| (c, run_chunk(c))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("worker panicked") {
                    slots[c] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };

    let mut results = Vec::with_capacity(n);
    let mut accs = Vec::with_capacity(chunks);
    for r in done {
        let (rs, acc) = r?;
        results.extend(rs);
        accs.push(acc);
    }
    Ok((results, accs))
}
