//! Deterministic random streams and schedule-independent parallel maps.
//!
//! Every independent unit of work (a trajectory, a Monte Carlo chunk) gets its
//! own ChaCha stream selected by `(master_seed, index)`. Results are reduced in
//! index order, so output does not depend on how many workers ran the map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Stream = ChaCha8Rng;

/// Stream number `index` under `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Maps `f` over `0..count` in parallel and returns the results in index order.
///
/// `workers = None` uses the global rayon pool; `Some(k)` runs on a dedicated
/// pool of `k` threads.
pub fn ordered_map<T, F>(count: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
    match workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .expect("thread pool")
            .install(run),
        None => run(),
    }
}
