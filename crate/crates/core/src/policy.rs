//! Desk-scale differentiable policy: frozen dense base plus trainable
//! low-rank adapters.
//!
//! The network maps `[embedding ; command feature]` through two tanh hidden
//! layers to the penultimate representation `h`, then linearly to a 7-D
//! action. Each layer's effective weight is `W_base + B * A`; only the `B`/`A`
//! factors are ever updated after construction, which is what makes the
//! forgetting guarantees structurally checkable (base checksums are stable
//! across any number of adaptation cycles).
//!
//! Forward passes are pure given an immutable `PolicyState`; updates require
//! exclusive access, so readers never observe a half-updated adapter.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{CommandFeature, Embedding};
use crate::error::{Error, Result};
use crate::memory::ACTION_DIM;

const CHECKPOINT_MAGIC: &[u8; 8] = b"XPRSPOL1";
const CHECKPOINT_VERSION: u32 = 1;

/// Penultimate-layer representation used by the contrastive losses.
/// Not unit-normalized: the representation space keeps a learned scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    values: Array1<f64>,
}

impl Representation {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    /// Dot product against another representation.
    pub fn dot(&self, other: &Representation) -> f64 {
        self.values.dot(&other.values)
    }

    /// Euclidean distance to another representation.
    pub fn distance(&self, other: &Representation) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Policy architecture and adapter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Command feature dimension fed alongside the embedding.
    pub d_c: usize,
    /// Width of the first hidden layer.
    pub hidden: usize,
    /// Representation dimension (second hidden layer).
    pub d_h: usize,
    /// Low-rank adapter rank.
    pub lora_rank: usize,
    /// Which layer indices carry adapters (0 = input projection,
    /// 1 = hidden-to-hidden, 2 = output projection).
    pub adapted_layers: Vec<usize>,
    /// Seed for base-weight and adapter initialization.
    pub init_seed: u64,
    /// Stddev of the Gaussian init for adapter `A` factors.
    pub lora_init_sigma: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_c: 16,
            hidden: 64,
            d_h: 64,
            lora_rank: 4,
            adapted_layers: vec![1],
            init_seed: 13,
            lora_init_sigma: 0.01,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.hidden == 0 || self.d_h == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        if self.lora_rank == 0 {
            return Err(Error::Config("lora_rank must be >= 1".into()));
        }
        if self.adapted_layers.iter().any(|&l| l >= LAYER_COUNT) {
            return Err(Error::Config(format!(
                "adapted_layers entries must be < {LAYER_COUNT}"
            )));
        }
        if !self.lora_init_sigma.is_finite() || self.lora_init_sigma < 0.0 {
            return Err(Error::Config("lora_init_sigma must be finite >= 0".into()));
        }
        Ok(())
    }
}

/// Number of dense projections in the stack.
pub const LAYER_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Trainable low-rank factors for one layer: effective weight `W + B * A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// `d_out x r`, initialized to zero.
    pub b: Array2<f64>,
    /// `r x d_in`, initialized to a small Gaussian.
    pub a: Array2<f64>,
}

impl LoraFactors {
    fn delta(&self) -> Array2<f64> {
        self.b.dot(&self.a)
    }

    /// Trainable parameter count `r * (d_in + d_out)`.
    pub fn param_count(&self) -> usize {
        self.b.len() + self.a.len()
    }
}

/// First/second-moment accumulators for the adapter optimizer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: AdapterGrads,
    v: AdapterGrads,
    t: i32,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(policy: &PolicyState) -> Self {
        Self {
            m: AdapterGrads::zeros_like(policy),
            v: AdapterGrads::zeros_like(policy),
            t: 0,
        }
    }
}

/// Gradients over the adapter factors, aligned with the policy's layers.
#[derive(Debug, Clone)]
pub struct AdapterGrads {
    /// Per layer: `Some((dL/dB, dL/dA))` for adapted layers.
    pub layers: Vec<Option<(Array2<f64>, Array2<f64>)>>,
}

impl AdapterGrads {
    pub fn zeros_like(policy: &PolicyState) -> Self {
        Self {
            layers: policy
                .lora
                .iter()
                .map(|slot| {
                    slot.as_ref().map(|f| {
                        (
                            Array2::zeros(f.b.raw_dim()),
                            Array2::zeros(f.a.raw_dim()),
                        )
                    })
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &AdapterGrads) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((gb, ga)), Some((ob, oa))) = (mine.as_mut(), theirs.as_ref()) {
                *gb += ob;
                *ga += oa;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for slot in self.layers.iter_mut().flatten() {
            slot.0.mapv_inplace(|v| v * factor);
            slot.1.mapv_inplace(|v| v * factor);
        }
    }

    /// Largest absolute component across all factors.
    pub fn inf_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|(gb, ga)| gb.iter().chain(ga.iter()))
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|(gb, ga)| gb.iter().chain(ga.iter()).all(|v| v.is_finite()))
    }
}

/// Per-item activations kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array1<f64>,
    z1: Array1<f64>,
    h: Array1<f64>,
    pub action: Array1<f64>,
}

impl ForwardTrace {
    pub fn representation(&self) -> Representation {
        Representation::new(self.h.clone())
    }
}

/// Full-network gradients; used by the pretraining phase only.
#[derive(Debug, Clone)]
pub struct FullGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

/// Frozen base network plus trainable adapters.
#[derive(Debug, Clone)]
pub struct PolicyState {
    d_e: usize,
    cfg: PolicyConfig,
    layers: Vec<DenseLayer>,
    lora: Vec<Option<LoraFactors>>,
    /// Cached `W + B * A` per layer, rebuilt whenever factors change.
    effective: Vec<Array2<f64>>,
}

fn quantize_f32(v: f64) -> f64 {
    (v as f32) as f64
}

impl PolicyState {
    /// Builds a fresh policy: seeded Gaussian base weights (quantized through
    /// f32 so checkpoints round-trip them exactly) and zero-effect adapters.
    pub fn new(cfg: &PolicyConfig, d_e: usize) -> Result<Self> {
        cfg.validate()?;
        if d_e == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let shapes = Self::layer_shapes(cfg, d_e);
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed);
        let layers = shapes
            .iter()
            .map(|&(d_out, d_in)| {
                let scale = 1.0 / (d_in as f64).sqrt();
                let w = Array2::from_shape_fn((d_out, d_in), |_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    quantize_f32(g * scale)
                });
                DenseLayer {
                    w,
                    b: Array1::zeros(d_out),
                }
            })
            .collect();
        let mut state = Self {
            d_e,
            cfg: cfg.clone(),
            layers,
            lora: vec![None; LAYER_COUNT],
            effective: Vec::new(),
        };
        let factors = init_lora(cfg, d_e)?;
        for (l, f) in factors {
            state.lora[l] = Some(f);
        }
        state.rebuild_effective();
        Ok(state)
    }

    fn rebuild_effective(&mut self) {
        self.effective = self
            .layers
            .iter()
            .zip(&self.lora)
            .map(|(layer, slot)| match slot {
                Some(f) => &layer.w + &f.delta(),
                None => layer.w.clone(),
            })
            .collect();
    }

    /// All-zero base weights (the policy emits the zero action everywhere);
    /// adapters initialized as usual. Useful as an inert baseline.
    pub fn zeroed(cfg: &PolicyConfig, d_e: usize) -> Result<Self> {
        let mut state = Self::new(cfg, d_e)?;
        for layer in state.layers.iter_mut() {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        state.rebuild_effective();
        Ok(state)
    }

    fn layer_shapes(cfg: &PolicyConfig, d_e: usize) -> [(usize, usize); LAYER_COUNT] {
        [
            (cfg.hidden, d_e + cfg.d_c),
            (cfg.d_h, cfg.hidden),
            (ACTION_DIM, cfg.d_h),
        ]
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn d_c(&self) -> usize {
        self.cfg.d_c
    }

    pub fn d_h(&self) -> usize {
        self.cfg.d_h
    }



    /// Deterministic forward pass: returns the action and the penultimate
    /// representation `h` (the activation right before the action projection).
    pub fn forward(&self, e: &Embedding, c: &CommandFeature) -> Result<(Array1<f64>, Representation)> {
        let trace = self.forward_trace(e, c)?;
        let h = trace.representation();
        Ok((trace.action, h))
    }

    /// Forward pass that keeps activations for backprop.
    pub fn forward_trace(&self, e: &Embedding, c: &CommandFeature) -> Result<ForwardTrace> {
        if e.d_e() != self.d_e {
            return Err(Error::DimensionMismatch {
                context: "policy embedding input",
                expected: self.d_e,
                actual: e.d_e(),
            });
        }
        if c.dim() != self.cfg.d_c {
            return Err(Error::DimensionMismatch {
                context: "policy command input",
                expected: self.cfg.d_c,
                actual: c.dim(),
            });
        }
        let mut input = Array1::zeros(self.d_e + self.cfg.d_c);
        for (i, &v) in e.values().iter().enumerate() {
            input[i] = v;
        }
        for (i, &v) in c.values().iter().enumerate() {
            input[self.d_e + i] = v;
        }
        let z1 = (self.effective[0].dot(&input) + &self.layers[0].b).mapv(f64::tanh);
        let h = (self.effective[1].dot(&z1) + &self.layers[1].b).mapv(f64::tanh);
        let action = self.effective[2].dot(&h) + &self.layers[2].b;
        Ok(ForwardTrace {
            input,
            z1,
            h,
            action,
        })
    }

    /// Backprop from upstream gradients on the action output and (optionally)
    /// on the representation `h`. Returns full-network weight gradients.
    pub fn backward(&self, trace: &ForwardTrace, grad_action: &Array1<f64>, grad_h: Option<&Array1<f64>>) -> FullGrads {
        let mut gh = self.effective[2].t().dot(grad_action);
        if let Some(extra) = grad_h {
            gh += extra;
        }
        let gpre2 = &gh * &trace.h.mapv(|v| 1.0 - v * v);
        let gz1 = self.effective[1].t().dot(&gpre2);
        let gpre1 = &gz1 * &trace.z1.mapv(|v| 1.0 - v * v);

        let outer = |g: &Array1<f64>, x: &Array1<f64>| {
            let mut m = Array2::zeros((g.len(), x.len()));
            for (i, gi) in g.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    m[(i, j)] = gi * xj;
                }
            }
            m
        };
        FullGrads {
            w: vec![
                outer(&gpre1, &trace.input),
                outer(&gpre2, &trace.z1),
                outer(grad_action, &trace.h),
            ],
            b: vec![gpre1, gpre2, grad_action.clone()],
        }
    }

    /// Projects full weight gradients onto the adapter factors:
    /// `dL/dB = dL/dW * A^T`, `dL/dA = B^T * dL/dW`.
    pub fn adapter_grads(&self, full: &FullGrads) -> AdapterGrads {
        AdapterGrads {
            layers: self
                .lora
                .iter()
                .enumerate()
                .map(|(l, slot)| {
                    slot.as_ref().map(|f| {
                        let gw = &full.w[l];
                        (gw.dot(&f.a.t()), f.b.t().dot(gw))
                    })
                })
                .collect(),
        }
    }

    /// Adam-normalized step on the adapter factors with decoupled weight
    /// decay (decay shrinks factors directly and applies to adapters only).
    pub fn apply_adapter_update_adam(
        &mut self,
        grads: &AdapterGrads,
        opt: &mut AdamState,
        lr: f64,
        weight_decay: f64,
    ) {
        opt.t += 1;
        let bias1 = 1.0 - AdamState::BETA1.powi(opt.t);
        let bias2 = 1.0 - AdamState::BETA2.powi(opt.t);
        for ((slot, g), (m_slot, v_slot)) in self
            .lora
            .iter_mut()
            .zip(&grads.layers)
            .zip(opt.m.layers.iter_mut().zip(opt.v.layers.iter_mut()))
        {
            let (Some(f), Some((gb, ga))) = (slot.as_mut(), g.as_ref()) else {
                continue;
            };
            let (Some((mb, ma)), Some((vb, va))) = (m_slot.as_mut(), v_slot.as_mut()) else {
                continue;
            };
            if weight_decay > 0.0 {
                let shrink = 1.0 - lr * weight_decay;
                f.b.mapv_inplace(|v| v * shrink);
                f.a.mapv_inplace(|v| v * shrink);
            }
            let mut update = |target: &mut Array2<f64>,
                              m: &mut Array2<f64>,
                              v: &mut Array2<f64>,
                              g: &Array2<f64>| {
                m.zip_mut_with(g, |m, &g| *m = AdamState::BETA1 * *m + (1.0 - AdamState::BETA1) * g);
                v.zip_mut_with(g, |v, &g| *v = AdamState::BETA2 * *v + (1.0 - AdamState::BETA2) * g * g);
                ndarray::Zip::from(target)
                    .and(&*m)
                    .and(&*v)
                    .for_each(|t, &m, &v| {
                        let mhat = m / bias1;
                        let vhat = v / bias2;
                        *t -= lr * mhat / (vhat.sqrt() + AdamState::EPS);
                    });
            };
            update(&mut f.b, mb, vb, gb);
            update(&mut f.a, ma, va, ga);
        }
        self.rebuild_effective();
    }

    /// Plain SGD step on the adapter factors with decoupled weight decay
    /// (decay shrinks factors directly and applies to adapters only).
    pub fn apply_adapter_update(&mut self, grads: &AdapterGrads, lr: f64, weight_decay: f64) {
        for (slot, g) in self.lora.iter_mut().zip(&grads.layers) {
            if let (Some(f), Some((gb, ga))) = (slot.as_mut(), g.as_ref()) {
                if weight_decay > 0.0 {
                    let shrink = 1.0 - lr * weight_decay;
                    f.b.mapv_inplace(|v| v * shrink);
                    f.a.mapv_inplace(|v| v * shrink);
                }
                f.b.scaled_add(-lr, gb);
                f.a.scaled_add(-lr, ga);
            }
        }
        self.rebuild_effective();
    }

    /// Full-network SGD step. Pretraining only: this produces the base
    /// weights that are then considered frozen for all adaptation.
    pub fn apply_base_update(&mut self, grads: &FullGrads, lr: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.w.scaled_add(-lr, &grads.w[l]);
            layer.b.scaled_add(-lr, &grads.b[l]);
        }
        self.rebuild_effective();
    }

    /// Rounds base weights through f32 so the checkpoint format reproduces
    /// them exactly. Called once at the end of pretraining.
    pub fn quantize_base_f32(&mut self) {
        for layer in self.layers.iter_mut() {
            layer.w.mapv_inplace(quantize_f32);
            layer.b.mapv_inplace(quantize_f32);
        }
        self.rebuild_effective();
    }

    /// Copy of the adapter factors (for atomic-cycle rollback).
    pub fn adapter_snapshot(&self) -> Vec<Option<LoraFactors>> {
        self.lora.clone()
    }

    /// Restores adapter factors from a snapshot.
    pub fn restore_adapters(&mut self, snapshot: Vec<Option<LoraFactors>>) {
        self.lora = snapshot;
        self.rebuild_effective();
    }

    pub fn adapters(&self) -> &[Option<LoraFactors>] {
        &self.lora
    }

    /// Trainable (adapter) parameter count.
    pub fn trainable_param_count(&self) -> usize {
        self.lora
            .iter()
            .flatten()
            .map(LoraFactors::param_count)
            .sum()
    }

    /// Total parameter count: base weights and biases plus adapters.
    pub fn total_param_count(&self) -> usize {
        let base: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        base + self.trainable_param_count()
    }

    /// CRC32 over the base weights; stable iff the base is untouched.
    pub fn base_checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for layer in &self.layers {
            for v in layer.w.iter().chain(layer.b.iter()) {
                hasher.update(&v.to_le_bytes());
            }
        }
        hasher.finalize()
    }

    /// Serializes the checkpoint: shapes, base weights and adapters as f32,
    /// trailing CRC32. Adapter factors are rounded to f32 by the format.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_e as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.d_c as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.d_h as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.lora_rank as u32).to_le_bytes());
        for l in 0..LAYER_COUNT {
            let layer = &self.layers[l];
            out.extend_from_slice(&(layer.w.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.w.ncols() as u32).to_le_bytes());
            for v in layer.w.iter().chain(layer.b.iter()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            match &self.lora[l] {
                Some(f) => {
                    out.push(1);
                    for v in f.b.iter().chain(f.a.iter()) {
                        out.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
                None => out.push(0),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Writes the checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.checkpoint_bytes())?;
        Ok(())
    }

    /// Parses a checkpoint produced by [`PolicyState::checkpoint_bytes`].
    pub fn from_checkpoint_bytes(bytes: &[u8], cfg: &PolicyConfig) -> Result<Self> {
        const KIND: &str = "policy checkpoint";
        if bytes.len() < 12 {
            return Err(Error::Truncated { file_kind: KIND });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { file_kind: KIND });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadVersion {
                file_kind: KIND,
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated { file_kind: KIND });
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::ChecksumMismatch {
                file_kind: KIND,
                stored,
                computed,
            });
        }
        let mut pos = 12usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).ok_or(Error::Truncated { file_kind: KIND })?;
            if end > body_len {
                return Err(Error::Truncated { file_kind: KIND });
            }
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        let u32_at = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let d_e = u32_at(&mut pos)? as usize;
        let d_c = u32_at(&mut pos)? as usize;
        let hidden = u32_at(&mut pos)? as usize;
        let d_h = u32_at(&mut pos)? as usize;
        let rank = u32_at(&mut pos)? as usize;
        let mut cfg = cfg.clone();
        cfg.d_c = d_c;
        cfg.hidden = hidden;
        cfg.d_h = d_h;
        cfg.lora_rank = rank;
        let mut layers = Vec::with_capacity(LAYER_COUNT);
        let mut lora: Vec<Option<LoraFactors>> = Vec::with_capacity(LAYER_COUNT);
        for _ in 0..LAYER_COUNT {
            let rows = u32_at(&mut pos)? as usize;
            let cols = u32_at(&mut pos)? as usize;
            let mut w = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    w[(i, j)] =
                        f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
                }
            }
            let mut b = Array1::zeros(rows);
            for i in 0..rows {
                b[i] = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
            }
            layers.push(DenseLayer { w, b });
            let has_adapter = take(&mut pos, 1)?[0] != 0;
            if has_adapter {
                let mut fb = Array2::zeros((rows, rank));
                for i in 0..rows {
                    for j in 0..rank {
                        fb[(i, j)] =
                            f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
                    }
                }
                let mut fa = Array2::zeros((rank, cols));
                for i in 0..rank {
                    for j in 0..cols {
                        fa[(i, j)] =
                            f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
                    }
                }
                lora.push(Some(LoraFactors { b: fb, a: fa }));
            } else {
                lora.push(None);
            }
        }
        if pos != body_len {
            return Err(Error::Truncated { file_kind: KIND });
        }
        cfg.adapted_layers = lora
            .iter()
            .enumerate()
            .filter_map(|(l, s)| s.as_ref().map(|_| l))
            .collect();
        let mut state = Self {
            d_e,
            cfg,
            layers,
            lora,
            effective: Vec::new(),
        };
        state.rebuild_effective();
        Ok(state)
    }

    /// Reads a checkpoint file.
    pub fn load(path: &Path, cfg: &PolicyConfig) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?, cfg)
    }
}

/// Fresh adapter factors for the configured layer set: `B = 0` so the adapted
/// policy is exactly the base policy at cycle zero, `A ~ N(0, sigma^2)`.
pub fn init_lora(cfg: &PolicyConfig, d_e: usize) -> Result<Vec<(usize, LoraFactors)>> {
    cfg.validate()?;
    let shapes = PolicyState::layer_shapes(cfg, d_e);
    // Separate stream from the base init.
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed ^ 0xa5a5_a5a5_5a5a_5a5a);
    let mut out = Vec::new();
    let mut sorted = cfg.adapted_layers.clone();
    sorted.sort_unstable();
    sorted.dedup();
    for l in sorted {
        let (d_out, d_in) = shapes[l];
        let b = Array2::zeros((d_out, cfg.lora_rank));
        let a = Array2::from_shape_fn((cfg.lora_rank, d_in), |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            quantize_f32(g * cfg.lora_init_sigma)
        });
        out.push((l, LoraFactors { b, a }));
    }
    Ok(out)
}
