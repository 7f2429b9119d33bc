//! Federated hyperparameter optimization simulator.
//!
//! Two-phase pipeline: centralized TPE-based hyperparameter search on two
//! synthetic binary classification tasks, followed by FedAvg training over
//! non-IID clients under three hyperparameter schemes (per-task optima and
//! a combined configuration built from them).

pub mod data;
pub mod error;
pub mod fedavg;
pub mod heuristic;
pub mod models;
pub mod pipeline;
pub mod search_space;
pub mod tpe;

pub use error::Error;

/// RNG used throughout; ChaCha gives portable, bit-reproducible streams.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Derives an independent RNG stream from a base seed and stream labels.
///
/// SplitMix64 finalization over the mixed words, so streams for different
/// (round, client) pairs are uncorrelated regardless of execution order.
pub fn derive_rng(seed: u64, a: u64, b: u64) -> SeededRng {
    use rand::SeedableRng;
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(a)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(b);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    SeededRng::seed_from_u64(z)
}
