//! Counter-based random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha8 stream addressed by
//! `(run seed, domain, prompt, iteration)`. Within a stream, the draws for a
//! group slot live at a fixed word offset, so slot `i` of a group sees the
//! same uniforms no matter how many slots precede it or which thread draws it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separates independent uses of the same run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Response sampling and reward corruption during training.
    Rollout = 1,
    /// Batch order within an epoch.
    Shuffle = 2,
    /// Stage-1 holdout construction and scoring.
    Holdout = 3,
    /// Environment and instance generators.
    Generator = 4,
    /// Verification suites.
    Verify = 5,
}

/// 32-bit words consumed per group slot (two `f64` draws).
const WORDS_PER_SLOT: u128 = 4;

/// Opens the stream for `(seed, domain, prompt, iteration)`.
pub fn stream(seed: u64, domain: Domain, prompt: u64, iteration: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&prompt.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(iteration);
    rng
}

/// The pair of uniforms `(u_response, xi)` reserved for one group slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDraw {
    pub response_uniform: f64,
    pub xi: f64,
}

/// Reads the draws of `slot` from a stream without disturbing other slots.
pub fn slot_draw(rng: &mut ChaCha8Rng, slot: usize) -> SlotDraw {
    rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
    let response_uniform = rng.gen::<f64>();
    let xi = rng.gen::<f64>();
    SlotDraw {
        response_uniform,
        xi,
    }
}

/// Convenience RNG for generators and tests that do not need slot addressing.
pub fn seeded(seed: u64, domain: Domain) -> ChaCha8Rng {
    stream(seed, domain, 0, 0)
}
