//! Device-mismatch sampler.
//!
//! Factors are log-normal with median 1. Every factor is a pure function of
//! the seed and a device key, so a fabric can be regenerated bit-identically
//! and devices can be sampled in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Address;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchConfig {
    /// Coefficient of variation of per-neuron factors.
    pub cv_neuron: f64,
    /// Coefficient of variation of per-CAM-slot factors.
    pub cv_cam: f64,
    pub seed: u64,
}

impl MismatchConfig {
    pub fn homogeneous(seed: u64) -> Self {
        Self {
            cv_neuron: 0.0,
            cv_cam: 0.0,
            seed,
        }
    }
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self {
            cv_neuron: 0.25,
            cv_cam: 0.15,
            seed: 1,
        }
    }
}

/// Identifies one mismatched device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MismatchKey {
    /// Scales the time constants and weights of all synapses of a neuron.
    Neuron(Address),
    /// Membrane capacitance of a neuron.
    NeuronCapacitance(Address),
    /// Leak conductance of a neuron.
    NeuronLeak(Address),
    /// Current converter between one CAM word and its synapse.
    Slot(Address, u8),
}

impl MismatchKey {
    fn words(&self) -> (u64, u64) {
        match *self {
            MismatchKey::Neuron(a) => (1, a.global_index() as u64),
            MismatchKey::NeuronCapacitance(a) => (2, a.global_index() as u64),
            MismatchKey::NeuronLeak(a) => (3, a.global_index() as u64),
            MismatchKey::Slot(a, slot) => (4, ((a.global_index() as u64) << 8) | slot as u64),
        }
    }

    fn is_slot(&self) -> bool {
        matches!(self, MismatchKey::Slot(..))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream seed for a (seed, a, b) triple. Also used for per-trial RNG
/// streams elsewhere in the crate.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b)
}

/// Log-normal multiplicative factor with median 1 and the given coefficient
/// of variation.
pub fn lognormal_factor(cv: f64, z: f64) -> f64 {
    if cv == 0.0 {
        return 1.0;
    }
    let sigma = (1.0 + cv * cv).ln().sqrt();
    (sigma * z).exp()
}

pub fn sample_mismatch(config: &MismatchConfig, key: MismatchKey) -> f64 {
    let cv = if key.is_slot() {
        config.cv_cam
    } else {
        config.cv_neuron
    };
    if cv == 0.0 {
        return 1.0;
    }
    let (a, b) = key.words();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, a, b));
    let z: f64 = StandardNormal.sample(&mut rng);
    lognormal_factor(cv, z)
}
