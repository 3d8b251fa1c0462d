//! Deterministic RNG stream derivation.
//!
//! All randomness in the crate flows from a single master seed. Independent
//! consumers (jobset generation, per-episode action sampling, evaluation,
//! parameter init) get their own ChaCha8 stream derived from the master seed
//! plus a purpose tag and up to three indices. Derivation is stateless, so
//! parallel rollouts and checkpoint resume reproduce exactly the same draws
//! as a sequential, uninterrupted run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The tag keeps streams for different
/// purposes disjoint even when their indices collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Training jobset generation (index a = jobset number).
    TrainJobset = 1,
    /// Held-out evaluation jobset generation (index a = jobset number).
    EvalJobset = 2,
    /// Action sampling in one rollout (a = iteration, b = jobset, c = episode).
    Rollout = 3,
    /// Policy parameter initialization.
    ParamInit = 4,
    /// Heuristic / comparison episodes (a = scheduler id, b = jobset number).
    Comparison = 5,
    /// Policy evaluation episodes (a = jobset number).
    Evaluation = 6,
}

/// splitmix64, used to whiten the (kind, a, b, c) tuple into a 64-bit stream id.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the RNG stream for `(kind, a, b, c)` under `master_seed`.
///
/// The master seed selects the ChaCha key; the whitened tuple selects the
/// ChaCha stream, so distinct tuples yield independent sequences.
pub fn derive(master_seed: u64, kind: StreamKind, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut id = splitmix64(kind as u64);
    id = splitmix64(id ^ a);
    id = splitmix64(id ^ b);
    id = splitmix64(id ^ c);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id);
    rng
}
