//! Seeded random sources shared by initialization, sampling and data generation.
//!
//! Every stream is a ChaCha8 generator. Child seeds are derived from a master
//! seed and a purpose tag through SHA-256, so adding a new consumer never
//! shifts the numbers drawn by an existing one.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

/// Derives a child seed that depends only on `(master, tag)`.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, tag: &str) -> SeededRng {
    seeded(derive_seed(master, tag))
}

/// Uniform draw in the open interval (0, 1], built from the top 53 bits.
fn unit_open_low<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal sampler using the Box–Muller transform.
///
/// Both outputs of each transform are used; the second one is cached.
#[derive(Debug, Default, Clone)]
pub struct BoxMuller {
    cached: Option<f64>,
}

impl BoxMuller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: RngCore>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        let u1 = unit_open_low(rng);
        let u2 = unit_open_low(rng);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.cached = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

pub fn uniform<R: Rng>(rng: &mut R, low: f64, high: f64) -> f64 {
    low + (high - low) * rng.random::<f64>()
}
