//! Reproducible random streams and the randomization process `ξ^Π`.
//!
//! A stream is keyed by `(master seed, purpose, index)`; the ChaCha key is
//! the SHA-256 digest of that triple, so paths can be simulated in any order
//! and on any thread without sharing a generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Partition;

pub type Stream = ChaCha12Rng;

/// Environment variable overriding the master seed.
pub const SEED_ENV: &str = "GRIDRL_SEED";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub purpose: String,
    pub index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, purpose: impl Into<String>, index: u64) -> Self {
        SeedSpec {
            master_seed,
            purpose: purpose.into(),
            index,
        }
    }

    pub fn stream(&self) -> Stream {
        derive_stream(self)
    }
}

pub fn derive_stream(seed: &SeedSpec) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.master_seed.to_le_bytes());
    h.update((seed.purpose.len() as u64).to_le_bytes());
    h.update(seed.purpose.as_bytes());
    h.update(seed.index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    Stream::from_seed(key)
}

/// Shorthand for `derive_stream(&SeedSpec::new(master, purpose, index))`.
pub fn stream(master_seed: u64, purpose: &str, index: u64) -> Stream {
    derive_stream(&SeedSpec::new(master_seed, purpose, index))
}

/// `GRIDRL_SEED` if set and parseable, else `fallback`.
pub fn seed_from_env(fallback: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(fallback)
}

/// A partition together with i.i.d. uniforms `ξ_1, …, ξ_n ∈ [0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    pub partition: Partition,
    d: usize,
    /// `n × d`, row-major; row `i-1` holds `ξ_i`.
    xi: Vec<f64>,
}

impl RandomizationDraw {
    pub fn from_values(partition: Partition, d: usize, xi: Vec<f64>) -> crate::Result<Self> {
        if d == 0 || xi.len() != partition.n() * d {
            return Err(crate::Error::Input(format!(
                "need {} uniforms for {} intervals in dimension {d}, got {}",
                partition.n() * d,
                partition.n(),
                xi.len()
            )));
        }
        if xi.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(crate::Error::Input("uniform marks must lie in [0, 1]".into()));
        }
        Ok(RandomizationDraw { partition, d, xi })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    /// `ξ_i`, 1-based.
    pub fn xi(&self, i: usize) -> &[f64] {
        &self.xi[(i - 1) * self.d..i * self.d]
    }

    /// `ξ^Π_t`: the `ξ_i` with `t ∈ (t_{i-1}, t_i]`.
    pub fn lookup(&self, t: f64) -> Option<&[f64]> {
        self.partition.interval_index(t).map(|i| self.xi(i))
    }
}

pub fn sample_grid_randomization<R: Rng + ?Sized>(
    partition: &Partition,
    d: usize,
    rng: &mut R,
) -> RandomizationDraw {
    let xi = (0..partition.n() * d).map(|_| rng.random::<f64>()).collect();
    RandomizationDraw {
        partition: partition.clone(),
        d,
        xi,
    }
}
