//! Counter-addressed noise streams.
//!
//! A [`StreamKey`] is five scalars. The first three (master seed, timestep,
//! worker) form the ChaCha key; layer and tag select the ChaCha stream; the
//! draw index is the word position inside that stream. Any draw of any
//! stream can therefore be regenerated on any process without state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Result};

/// What a stream is used for. Part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum StreamTag {
    FactorA = 0,
    FactorB = 1,
    Data = 2,
    Init = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub timestep: u64,
    pub worker: u32,
    pub layer: u32,
    pub tag: StreamTag,
}

/// Domain separator mixed into the cipher key.
const KEY_DOMAIN: [u8; 12] = *b"eggroll-ns-1";

/// Number of 64-bit words reserved for each rejection-sampled draw.
const WORDS_PER_GGD_DRAW: u128 = 256;

pub fn derive_stream(
    master_seed: u64,
    timestep: u64,
    worker: u32,
    layer: u32,
    tag: StreamTag,
) -> StreamKey {
    StreamKey {
        master_seed,
        timestep,
        worker,
        layer,
        tag,
    }
}

impl StreamKey {
    /// Same address with a different tag.
    pub fn with_tag(self, tag: StreamTag) -> Self {
        StreamKey { tag, ..self }
    }

    pub fn with_layer(self, layer: u32) -> Self {
        StreamKey { layer, ..self }
    }

    fn cipher_key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.timestep.to_le_bytes());
        key[16..20].copy_from_slice(&self.worker.to_le_bytes());
        key[20..].copy_from_slice(&KEY_DOMAIN);
        key
    }

    fn stream_id(&self) -> u64 {
        (u64::from(self.layer) << 8) | self.tag as u64
    }

    /// A generator positioned at the start of this key's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.cipher_key());
        rng.set_stream(self.stream_id());
        rng
    }

    /// A generator positioned at 64-bit draw `index`.
    pub fn rng_at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_word_pos(2 * u128::from(index));
        rng
    }

    /// Raw 64-bit draws `[0, count)`.
    pub fn fill_u64(&self, count: usize) -> Vec<u64> {
        let mut rng = self.rng();
        (0..count).map(|_| rng.next_u64()).collect()
    }

    /// Draw `index` as a uniform in the open interval (0, 1).
    pub fn uniform_at(&self, index: u64) -> f64 {
        unit_open(self.rng_at(index).next_u64())
    }

    /// Draw `index` of the standard normal stream.
    pub fn gaussian_at(&self, index: u64) -> f64 {
        std_normal_from_bits(self.rng_at(index).next_u64())
    }
}

/// Maps 64 random bits to (0, 1) using the top 53 bits, never hitting 0 or 1.
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn std_normal_from_bits(bits: u64) -> f64 {
    // Φ⁻¹(u) = −√2 · erfc⁻¹(2u)
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * unit_open(bits))
}

/// `count` i.i.d. N(0, sigma0²) draws; draw `k` depends only on `(key, k)`.
pub fn fill_gaussian(key: StreamKey, count: usize, sigma0: f64) -> Result<Vec<f64>> {
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return invalid(format!("sigma0 must be positive, got {sigma0}"));
    }
    let mut rng = key.rng();
    Ok((0..count)
        .map(|_| sigma0 * std_normal_from_bits(rng.next_u64()))
        .collect())
}

/// Generalized Gaussian draws with density ∝ exp(−|x/s|^p).
///
/// |x/s|^p is Gamma(1/p, 1) distributed, so each draw is
/// `s · sign · G^(1/p)`. Gamma sampling rejects, so every draw owns a fixed
/// block of the stream and stays addressable by index.
pub fn fill_ggd(key: StreamKey, count: usize, scale: f64, shape: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return invalid(format!("GGD scale must be positive, got {scale}"));
    }
    if !(shape > 0.0) || !shape.is_finite() {
        return invalid(format!("GGD shape must be positive, got {shape}"));
    }
    let gamma = Gamma::new(1.0 / shape, 1.0)
        .map_err(|e| crate::Error::InvalidParameter(format!("GGD shape {shape}: {e}")))?;
    let base = key.rng();
    Ok((0..count as u128)
        .map(|k| {
            let mut rng = base.clone();
            rng.set_word_pos(2 * WORDS_PER_GGD_DRAW * k);
            let sign = if rng.next_u64() >> 63 == 0 { 1.0 } else { -1.0 };
            let g: f64 = gamma.sample(&mut rng);
            sign * scale * g.powf(1.0 / shape)
        })
        .collect())
}
