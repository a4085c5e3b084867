//! Counter-derived random substreams.
//!
//! Every unit of work (a trial, a user's channel draw, a sounding session)
//! owns a ChaCha stream addressed by `(master_seed, stream_id)`, so results
//! never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Packs a stream identifier: `tag` (8 bits) selects the kind of randomness,
/// `group` (8 bits) e.g. the K-factor index, `trial` (32 bits), `sub` (16 bits)
/// e.g. the user or SNR index.
pub fn stream_id(tag: u8, group: u8, trial: u32, sub: u16) -> u64 {
    ((tag as u64) << 56) | ((group as u64) << 48) | ((trial as u64) << 16) | sub as u64
}

pub fn substream(master_seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
