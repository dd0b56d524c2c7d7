//! Fixed-partition worker pool.
//!
//! Work is split into one contiguous chunk per worker and results come back
//! in chunk order, so reductions are bit-reproducible for a given worker count.

use rayon::prelude::*;

use crate::{Error, Result};

pub struct Workers {
    pool: rayon::ThreadPool,
    count: usize,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool, count })
    }

    /// One worker per logical core.
    pub fn default_count() -> usize {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Contiguous chunk boundaries for `len` items.
    pub fn partition(&self, len: usize) -> Vec<std::ops::Range<usize>> {
        let n = self.count;
        (0..n).map(|i| (i * len / n)..((i + 1) * len / n)).collect()
    }

    /// Applies `f(chunk_start, chunk)` to each chunk; results in chunk order.
    pub fn map_chunks<I, R, F>(&self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(usize, &[I]) -> R + Sync,
    {
        let parts = self.partition(items.len());
        self.pool.install(|| parts.into_par_iter().map(|r| f(r.start, &items[r])).collect())
    }

    /// Pairs chunk `i` with `states[i]`; `states.len()` must equal the worker count.
    pub fn for_each_chunk_with<I, S, F>(&self, items: &[I], states: &mut [S], f: F)
    where
        I: Sync,
        S: Send,
        F: Fn(usize, &[I], &mut S) + Sync,
    {
        assert_eq!(states.len(), self.count, "one state per worker");
        let parts = self.partition(items.len());
        self.pool.install(|| {
            states
                .par_iter_mut()
                .zip(parts.into_par_iter())
                .for_each(|(s, r)| f(r.start, &items[r], s))
        });
    }

    /// Parallel map over indices `0..len`, results in index order.
    pub fn map_indices<R, F>(&self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        let idx: Vec<usize> = (0..len).collect();
        self.map_chunks(&idx, |_, chunk| chunk.iter().map(|&i| f(i)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Deterministic 64-bit mix for deriving per-item seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
