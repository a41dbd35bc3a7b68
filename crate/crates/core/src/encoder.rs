//! Frozen feature extraction from synthetic observations.
//!
//! The encoder is a fixed, seeded random linear projection of a block-mean
//! downsampled image, followed by a pointwise tanh. Two projections produce a
//! semantic part and a spatial part which are concatenated into one embedding.
//! Parameters are immutable after construction, so encoding is a pure function
//! of (observation, params) and safe to call from any number of threads.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image height in pixels.
pub const IMG_H: usize = 224;
/// Image width in pixels.
pub const IMG_W: usize = 224;
/// Image channels.
pub const IMG_C: usize = 3;
/// Raw observation size in bytes (224 x 224 x 3 at 8 bits).
pub const RAW_OBS_BYTES: usize = IMG_H * IMG_W * IMG_C;
/// Maximum command length in tokens.
pub const DEFAULT_L_MAX: usize = 32;

/// A rendered RGB observation of the scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    /// Interleaved RGB pixel data, row-major, `IMG_H * IMG_W * IMG_C` bytes.
    pixels: Vec<u8>,
}

impl Observation {
    /// Wraps raw pixel data, enforcing the fixed 224x224x3 shape.
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != RAW_OBS_BYTES {
            return Err(Error::DimensionMismatch {
                context: "observation pixels",
                expected: RAW_OBS_BYTES,
                actual: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    /// An all-black observation.
    pub fn zeros() -> Self {
        Self {
            pixels: vec![0; RAW_OBS_BYTES],
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Pixel accessor by (row, column, channel).
    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * IMG_W + x) * IMG_C + c]
    }

    /// Raw storage cost of the observation in bytes.
    pub fn raw_byte_size(&self) -> usize {
        self.pixels.len()
    }
}

/// Unit-norm concatenated feature vector: semantic part followed by spatial part.
///
/// Values are kept in f64 for computation; persistence quantizes to f32
/// (4 bytes per component), which is the serialized storage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    d_sem: usize,
}

impl Embedding {
    /// Builds an embedding from its two parts.
    pub fn from_parts(semantic: Vec<f64>, spatial: Vec<f64>) -> Self {
        let d_sem = semantic.len();
        let mut values = semantic;
        values.extend_from_slice(&spatial);
        Self { values, d_sem }
    }

    /// Builds an embedding from an already-concatenated vector.
    pub fn from_concat(values: Vec<f64>, d_sem: usize) -> Result<Self> {
        if d_sem > values.len() {
            return Err(Error::DimensionMismatch {
                context: "embedding split point",
                expected: values.len(),
                actual: d_sem,
            });
        }
        Ok(Self { values, d_sem })
    }

    pub fn d_sem(&self) -> usize {
        self.d_sem
    }

    pub fn d_spa(&self) -> usize {
        self.values.len() - self.d_sem
    }

    /// Total (concatenated) dimension `d_e`.
    pub fn d_e(&self) -> usize {
        self.values.len()
    }

    pub fn semantic(&self) -> &[f64] {
        &self.values[..self.d_sem]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.values[self.d_sem..]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean norm of the full concatenation.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product over the full concatenation.
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.d_e() != other.d_e() {
            return Err(Error::DimensionMismatch {
                context: "embedding dot product",
                expected: self.d_e(),
                actual: other.d_e(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Serialized storage cost in bytes (32-bit reals).
    pub fn serialized_bytes(&self) -> usize {
        self.d_e() * 4
    }

    /// Rounds every component through f32, the persisted precision.
    ///
    /// Buffers store embeddings in this canonical form so that the f32
    /// snapshot format round-trips bit-exactly.
    pub fn quantize_f32(&self) -> Embedding {
        Embedding {
            values: self.values.iter().map(|&v| (v as f32) as f64).collect(),
            d_sem: self.d_sem,
        }
    }
}

/// Scales an embedding to unit Euclidean norm over the full concatenation.
///
/// Direction is preserved; a zero-norm (or non-finite) input is an error
/// rather than a silent NaN.
pub fn normalize(e: &Embedding) -> Result<Embedding> {
    let norm = e.norm();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(Embedding {
        values: e.values.iter().map(|v| v / norm).collect(),
        d_sem: e.d_sem,
    })
}

/// Raw-image-to-embedding compression ratio at 4 bytes per component.
pub fn compression_ratio(d_e: usize) -> f64 {
    RAW_OBS_BYTES as f64 / (d_e as f64 * 4.0)
}

/// Fraction of raw-image storage saved by storing the embedding instead.
pub fn storage_reduction(d_e: usize) -> f64 {
    1.0 - (d_e as f64 * 4.0) / RAW_OBS_BYTES as f64
}

/// Tokenized command, length-capped at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTokens {
    tokens: Vec<u32>,
}

impl CommandTokens {
    /// Validates `1 <= len <= l_max`.
    pub fn new(tokens: Vec<u32>, l_max: usize) -> Result<Self> {
        if tokens.is_empty() || tokens.len() > l_max {
            return Err(Error::Config(format!(
                "command length {} outside 1..={}",
                tokens.len(),
                l_max
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Configuration for the frozen encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Semantic part dimension.
    pub d_sem: usize,
    /// Spatial part dimension.
    pub d_spa: usize,
    /// Downsampling grid side; the projection input is `grid * grid * 3`.
    pub grid: usize,
    /// Seed for the fixed random projections.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_sem: 768,
            d_spa: 256,
            grid: 14,
            seed: 7,
        }
    }
}

/// Frozen projection weights. Immutable after construction.
///
/// Weights are drawn as f32 and widened to f64, so the f32 persistence format
/// reproduces them bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    d_sem: usize,
    d_spa: usize,
    grid: usize,
    seed: u64,
    w_sem: Array2<f64>,
    w_spa: Array2<f64>,
}

impl EncoderParams {
    /// Draws fixed projection weights from the config seed.
    pub fn generate(cfg: &EncoderConfig) -> Result<Self> {
        if cfg.d_sem == 0 || cfg.d_spa == 0 || cfg.grid == 0 {
            return Err(Error::Config(
                "encoder dimensions must be positive".to_string(),
            ));
        }
        let n_in = cfg.grid * cfg.grid * IMG_C;
        let scale = 1.0 / (n_in as f64).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let mut draw = |rows: usize| -> Array2<f64> {
            Array2::from_shape_fn((rows, n_in), |_| {
                // Uniform in [-scale, scale], quantized through f32.
                let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                ((u * scale) as f32) as f64
            })
        };
        let w_sem = draw(cfg.d_sem);
        let w_spa = draw(cfg.d_spa);
        Ok(Self {
            d_sem: cfg.d_sem,
            d_spa: cfg.d_spa,
            grid: cfg.grid,
            seed: cfg.seed,
            w_sem,
            w_spa,
        })
    }

    pub fn d_sem(&self) -> usize {
        self.d_sem
    }

    pub fn d_spa(&self) -> usize {
        self.d_spa
    }

    /// Concatenated embedding dimension.
    pub fn d_e(&self) -> usize {
        self.d_sem + self.d_spa
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Serializes the params to the length-free inner block used by
    /// buffer snapshots: grid u32, seed u64, d_sem u32, d_spa u32,
    /// then both weight matrices as little-endian f32, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_in = self.grid * self.grid * IMG_C;
        let mut out = Vec::with_capacity(20 + (self.d_sem + self.d_spa) * n_in * 4);
        out.extend_from_slice(&(self.grid as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.d_sem as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_spa as u32).to_le_bytes());
        for w in self.w_sem.iter().chain(self.w_spa.iter()) {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        out
    }

    /// Inverse of [`EncoderParams::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Truncated {
            file_kind: "encoder params",
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).ok_or_else(truncated)?;
            if end > bytes.len() {
                return Err(truncated());
            }
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let grid = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let d_sem = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let d_spa = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n_in = grid * grid * IMG_C;
        let mut read_matrix = |rows: usize| -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(rows * n_in);
            for _ in 0..rows * n_in {
                let v = f32::from_le_bytes(take(4)?.try_into().unwrap());
                data.push(v as f64);
            }
            Array2::from_shape_vec((rows, n_in), data).map_err(|_| Error::DimensionMismatch {
                context: "encoder params matrix",
                expected: rows * n_in,
                actual: 0,
            })
        };
        let w_sem = read_matrix(d_sem)?;
        let w_spa = read_matrix(d_spa)?;
        if pos != bytes.len() {
            return Err(truncated());
        }
        Ok(Self {
            d_sem,
            d_spa,
            grid,
            seed,
            w_sem,
            w_spa,
        })
    }

    /// CRC32 over the serialized params; used to assert the encoder stays frozen.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.to_bytes())
    }
}

/// The frozen encoder: block-mean downsample, project, tanh.
#[derive(Debug, Clone)]
pub struct Encoder {
    params: EncoderParams,
}

impl Encoder {
    pub fn new(params: EncoderParams) -> Self {
        Self { params }
    }

    /// Builds the encoder directly from a config.
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self::new(EncoderParams::generate(cfg)?))
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    /// Block-mean downsample to `grid x grid x 3` features, centered per
    /// channel. Centering is a fixed linear transform folded into the
    /// projection: it keeps similarity driven by scene content rather than
    /// global background level.
    fn features(&self, obs: &Observation) -> Array1<f64> {
        let grid = self.params.grid;
        let by = IMG_H / grid;
        let bx = IMG_W / grid;
        let mut feats = Array1::zeros(grid * grid * IMG_C);
        for gy in 0..grid {
            for gx in 0..grid {
                let mut sums = [0u64; IMG_C];
                for y in gy * by..(gy + 1) * by {
                    for x in gx * bx..(gx + 1) * bx {
                        for (c, sum) in sums.iter_mut().enumerate() {
                            *sum += obs.at(y, x, c) as u64;
                        }
                    }
                }
                let denom = (by * bx * 255) as f64;
                for (c, sum) in sums.iter().enumerate() {
                    feats[(gy * grid + gx) * IMG_C + c] = *sum as f64 / denom;
                }
            }
        }
        // Per-channel mean removal over the grid.
        let cells = (grid * grid) as f64;
        for c in 0..IMG_C {
            let mean: f64 = (0..grid * grid).map(|i| feats[i * IMG_C + c]).sum::<f64>() / cells;
            for i in 0..grid * grid {
                feats[i * IMG_C + c] -= mean;
            }
        }
        feats
    }

    /// Extracts the (not yet normalized) embedding of an observation.
    ///
    /// Pure and deterministic: identical inputs yield bit-identical outputs,
    /// including across save/load of the params.
    pub fn encode(&self, obs: &Observation) -> Result<Embedding> {
        let p = &self.params;
        let n_in = p.grid * p.grid * IMG_C;
        if p.w_sem.ncols() != n_in || p.w_sem.nrows() != p.d_sem {
            return Err(Error::DimensionMismatch {
                context: "semantic projection",
                expected: p.d_sem * n_in,
                actual: p.w_sem.len(),
            });
        }
        if p.w_spa.ncols() != n_in || p.w_spa.nrows() != p.d_spa {
            return Err(Error::DimensionMismatch {
                context: "spatial projection",
                expected: p.d_spa * n_in,
                actual: p.w_spa.len(),
            });
        }
        let feats = self.features(obs);
        let semantic = p.w_sem.dot(&feats).mapv(f64::tanh).to_vec();
        let spatial = p.w_spa.dot(&feats).mapv(f64::tanh).to_vec();
        Ok(Embedding::from_parts(semantic, spatial))
    }

    /// Encode followed by unit normalization.
    pub fn encode_normalized(&self, obs: &Observation) -> Result<Embedding> {
        normalize(&self.encode(obs)?)
    }
}

/// Seeded random unit-norm embedding (query fixture for snapshot inspection).
pub fn random_unit_embedding(d_sem: usize, d_spa: usize, seed: u64) -> Result<Embedding> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..d_sem + d_spa)
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    normalize(&Embedding::from_concat(values, d_sem)?)
}

/// Deterministic fixed-size feature for a token sequence.
///
/// Hashed bag of tokens: each token contributes a pseudo-random vector in
/// [-1, 1]^d derived from a splitmix64 stream, and the sum is divided by the
/// token count so every component stays bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandFeature {
    values: Vec<f64>,
}

impl CommandFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps command tokens to a `d_c`-dimensional feature vector.
pub fn command_feature(c: &CommandTokens, d_c: usize) -> CommandFeature {
    let mut values = vec![0.0; d_c];
    for &tok in c.tokens() {
        let mut state = (tok as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1234_5678_9abc_def0;
        for v in values.iter_mut() {
            let bits = splitmix64(&mut state);
            // Map to [-1, 1].
            *v += (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        }
    }
    let len = c.len() as f64;
    for v in values.iter_mut() {
        *v /= len;
    }
    CommandFeature { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            d_sem: 24,
            d_spa: 8,
            grid: 14,
            seed: 11,
        }
    }

    fn noise_obs(seed: u64) -> Observation {
        let mut state = seed;
        let mut px = vec![0u8; RAW_OBS_BYTES];
        for p in px.iter_mut() {
            *p = (splitmix64(&mut state) & 0xff) as u8;
        }
        Observation::new(px).unwrap()
    }

    #[test]
    fn zero_image_encodes_to_zero_vector() {
        let enc = Encoder::from_config(&small_cfg()).unwrap();
        let e = enc.encode(&Observation::zeros()).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic() {
        let enc = Encoder::from_config(&small_cfg()).unwrap();
        let obs = noise_obs(3);
        let a = enc.encode(&obs).unwrap();
        let b = enc.encode(&obs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_survives_param_round_trip() {
        let enc = Encoder::from_config(&small_cfg()).unwrap();
        let obs = noise_obs(9);
        let before = enc.encode(&obs).unwrap();
        let restored = EncoderParams::from_bytes(&enc.params().to_bytes()).unwrap();
        assert_eq!(restored, *enc.params());
        let after = Encoder::new(restored).encode(&obs).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn normalize_three_four_five() {
        let mut values = vec![0.0; 10];
        values[0] = 3.0;
        values[1] = 4.0;
        let e = Embedding::from_concat(values, 6).unwrap();
        let n = normalize(&e).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-15);
        assert!((n.values()[1] - 0.8).abs() < 1e-15);
        assert!(n.values()[2..].iter().all(|&v| v == 0.0));
        assert!((n.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_unit_vector_unchanged() {
        let mut values = vec![0.0; 8];
        values[3] = 1.0;
        let e = Embedding::from_concat(values, 4).unwrap();
        let n = normalize(&e).unwrap();
        for (a, b) in e.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let e = Embedding::from_concat(vec![0.0; 4], 2).unwrap();
        assert!(matches!(normalize(&e), Err(Error::ZeroNorm)));
    }

    #[test]
    fn compression_ratio_values() {
        assert!((compression_ratio(1024) - 36.75).abs() < 1e-12);
        assert!((compression_ratio(RAW_OBS_BYTES / 4) - 1.0).abs() < 1e-12);
        assert!((compression_ratio(512) - 73.5).abs() < 1e-12);
    }

    #[test]
    fn storage_reduction_hits_97_percent() {
        assert!(storage_reduction(1024) >= 0.97);
    }

    #[test]
    fn params_are_frozen_under_encode() {
        let enc = Encoder::from_config(&small_cfg()).unwrap();
        let before = enc.params().checksum();
        for seed in 0..4 {
            enc.encode(&noise_obs(seed)).unwrap();
        }
        assert_eq!(before, enc.params().checksum());
    }

    #[test]
    fn command_feature_is_deterministic_and_bounded() {
        let c = CommandTokens::new(vec![5, 19, 200], DEFAULT_L_MAX).unwrap();
        let a = command_feature(&c, 16);
        let b = command_feature(&c, 16);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn command_tokens_length_limits() {
        assert!(CommandTokens::new(vec![], DEFAULT_L_MAX).is_err());
        assert!(CommandTokens::new(vec![0; 33], DEFAULT_L_MAX).is_err());
        assert!(CommandTokens::new(vec![0; 32], DEFAULT_L_MAX).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_idempotent(values in proptest::collection::vec(-100.0f64..100.0, 4..64)) {
                prop_assume!(values.iter().map(|v| v * v).sum::<f64>() > 1e-12);
                let e = Embedding::from_concat(values, 2).unwrap();
                let once = normalize(&e).unwrap();
                let twice = normalize(&once).unwrap();
                prop_assert!((once.norm() - 1.0).abs() < 1e-9);
                for (a, b) in once.values().iter().zip(twice.values()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn dot_matches_cosine_for_unit_vectors(
                a in proptest::collection::vec(-1.0f64..1.0, 16),
                b in proptest::collection::vec(-1.0f64..1.0, 16),
            ) {
                prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-6);
                prop_assume!(b.iter().map(|v| v * v).sum::<f64>() > 1e-6);
                let ea = normalize(&Embedding::from_concat(a, 8).unwrap()).unwrap();
                let eb = normalize(&Embedding::from_concat(b, 8).unwrap()).unwrap();
                let dot = ea.dot(&eb).unwrap();
                let cosine = ea.dot(&eb).unwrap() / (ea.norm() * eb.norm());
                prop_assert!((dot - cosine).abs() <= 1e-9);
            }
        }
    }
}
