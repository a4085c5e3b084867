//! Hybrid analog/digital precoding for mmWave massive-MIMO backhaul.
//!
//! The crate covers the whole link-level chain: sparse geometric channel
//! generation ([`channel`]), exact SVD precoding and power allocation
//! ([`precoding`]), constant-modulus factorization of precoders onto a
//! phase-shifter network ([`hybrid`]), compressive three-phase channel
//! estimation ([`estimation`]), Monte Carlo capacity evaluation ([`sim`]),
//! and configuration / CSV plumbing ([`config`], [`report`]).

pub mod channel;
pub mod config;
pub mod error;
pub mod estimation;
pub mod hybrid;
pub mod linalg;
pub mod precoding;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
