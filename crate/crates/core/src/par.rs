//! Data-parallel helpers.
//!
//! Every helper returns results in index order, and all floating-point
//! reductions happen sequentially on the collected values, so outputs do not
//! depend on the worker count. Monte Carlo work is split into fixed-size
//! chunks, each driven by its own ChaCha stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per Monte Carlo chunk. Fixed so that results are independent of
/// how chunks are scheduled.
pub const MC_CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Independent generator for work item `stream` under a global `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `total` Monte Carlo draws in fixed chunks and returns the per-chunk
/// results in chunk order. `body(rng, count)` processes `count` draws.
pub fn mc_chunks<T, F>(seed: u64, total: usize, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    let chunks = total.div_ceil(MC_CHUNK);
    map_indexed(chunks, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let count = MC_CHUNK.min(total - i * MC_CHUNK);
        body(&mut rng, count)
    })
}

/// Number of worker threads the current pool would use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunked_streams_are_reproducible() {
        let run = || {
            mc_chunks(7, 10_000, |rng, count| {
                (0..count).map(|_| rng.random::<f64>()).sum::<f64>()
            })
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
