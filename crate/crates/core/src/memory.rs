//! Dual fixed-capacity FIFO replay buffers and their persistence.
//!
//! Successes and failures live in separate role-checked buffers. Eviction is
//! strictly FIFO; temporal weights influence retrieval probability only and
//! never storage decisions.
//!
//! Concurrency contract: single writer, multiple readers. Inserts are
//! serialized by the adaptation loop; retrieval reads may run concurrently
//! with each other but not with an insert. Rust's borrow rules enforce this
//! for in-process use; wrap in a lock if shared across threads.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::{CommandTokens, Embedding, EncoderParams, DEFAULT_L_MAX};
use crate::error::{Error, Result};

/// Operational unit-norm tolerance for stored embeddings.
///
/// Embeddings are normalized in f64 and then quantized to the 32-bit storage
/// precision, which perturbs the norm by up to ~1e-7; checks on stored
/// embeddings therefore use 1e-6.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Action dimensionality (3D position, 3D orientation, gripper).
pub const ACTION_DIM: usize = 7;

const SNAPSHOT_MAGIC: &[u8; 8] = b"XPRSBUF1";
const SNAPSHOT_VERSION: u32 = 1;

/// Which outcomes a buffer accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferRole {
    Success,
    Failure,
}

impl BufferRole {
    fn name(self) -> &'static str {
        match self {
            BufferRole::Success => "success",
            BufferRole::Failure => "failure",
        }
    }

    fn accepts(self, success: bool) -> bool {
        matches!(
            (self, success),
            (BufferRole::Success, true) | (BufferRole::Failure, false)
        )
    }
}

/// One stored interaction: embedding, command, action sequence, outcome, and
/// the adaptation cycle at which it was stored.
///
/// Success experiences carry expert actions; failures carry executed actions.
/// Embedding and actions are canonicalized through f32 at construction so the
/// snapshot format round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    embedding: Embedding,
    command: CommandTokens,
    actions: Array2<f64>,
    success: bool,
    stored_cycle: u64,
}

impl Experience {
    pub fn new(
        embedding: Embedding,
        command: CommandTokens,
        actions: Array2<f64>,
        success: bool,
        stored_cycle: u64,
    ) -> Result<Self> {
        if actions.nrows() != ACTION_DIM {
            return Err(Error::DimensionMismatch {
                context: "experience action rows",
                expected: ACTION_DIM,
                actual: actions.nrows(),
            });
        }
        if actions.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                context: "experience trajectory length",
                expected: 1,
                actual: 0,
            });
        }
        if actions.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                term: "experience actions",
            });
        }
        let embedding = embedding.quantize_f32();
        let norm = embedding.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm { norm });
        }
        let actions = actions.mapv(|a| (a as f32) as f64);
        Ok(Self {
            embedding,
            command,
            actions,
            success,
            stored_cycle,
        })
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn command(&self) -> &CommandTokens {
        &self.command
    }

    /// Action matrix, `7 x T`.
    pub fn actions(&self) -> &Array2<f64> {
        &self.actions
    }

    /// Trajectory length `T`.
    pub fn steps(&self) -> usize {
        self.actions.ncols()
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn stored_cycle(&self) -> u64 {
        self.stored_cycle
    }

    /// Serialized footprint: embedding + actions + command, 4 bytes each.
    pub fn storage_bytes(&self) -> usize {
        self.embedding.serialized_bytes() + ACTION_DIM * self.steps() * 4 + self.command.len() * 4
    }
}

/// Exponential temporal decay configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// Decay rate per adaptation cycle.
    pub decay_lambda: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self { decay_lambda: 0.1 }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.decay_lambda.is_finite() || self.decay_lambda < 0.0 {
            return Err(Error::Config(format!(
                "decay_lambda must be finite and >= 0, got {}",
                self.decay_lambda
            )));
        }
        Ok(())
    }
}

/// Priority weight of an experience stored `delta_t` adaptation cycles ago:
/// `exp(-lambda * delta_t)`. Strictly positive, non-increasing in age.
pub fn temporal_weight(delta_t: i64, cfg: &DecayConfig) -> Result<f64> {
    if delta_t < 0 {
        return Err(Error::NegativeAge { delta_t });
    }
    Ok((-cfg.decay_lambda * delta_t as f64).exp())
}

/// Fixed-capacity FIFO ring of experiences, oldest first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    role: BufferRole,
    capacity: usize,
    entries: VecDeque<Experience>,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(role: BufferRole, capacity: usize) -> Self {
        Self {
            role,
            capacity,
            entries: VecDeque::with_capacity(capacity),
            insert_count: 0,
        }
    }

    pub fn role(&self) -> BufferRole {
        self.role
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of inserts ever accepted.
    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    /// Entry by position, 0 = oldest surviving.
    pub fn get(&self, index: usize) -> Option<&Experience> {
        self.entries.get(index)
    }

    /// Iterates entries oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.entries.iter()
    }

    /// Appends as newest; evicts and returns the oldest entry when full.
    ///
    /// The buffer only accepts experiences matching its role.
    pub fn insert(&mut self, exp: Experience) -> Result<Option<Experience>> {
        if !self.role.accepts(exp.success()) {
            return Err(Error::RoleMismatch {
                success: exp.success(),
                role: self.role.name(),
            });
        }
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(exp);
        self.insert_count += 1;
        Ok(evicted)
    }
}

/// The success and failure buffers managed together.
#[derive(Debug, Clone)]
pub struct DualBuffers {
    pub success: ReplayBuffer,
    pub failure: ReplayBuffer,
}

impl DualBuffers {
    pub fn new(success_capacity: usize, failure_capacity: usize) -> Self {
        Self {
            success: ReplayBuffer::new(BufferRole::Success, success_capacity),
            failure: ReplayBuffer::new(BufferRole::Failure, failure_capacity),
        }
    }

    /// Routes an experience to the buffer matching its outcome.
    pub fn insert(&mut self, exp: Experience) -> Result<Option<Experience>> {
        if exp.success() {
            self.success.insert(exp)
        } else {
            self.failure.insert(exp)
        }
    }

    /// Total serialized footprint of all stored experiences, in bytes.
    pub fn memory_usage(&self) -> usize {
        self.success
            .iter()
            .chain(self.failure.iter())
            .map(Experience::storage_bytes)
            .sum()
    }
}

fn push_experience(out: &mut Vec<u8>, exp: &Experience) {
    out.extend_from_slice(&exp.stored_cycle.to_le_bytes());
    out.extend_from_slice(&(exp.command.len() as u32).to_le_bytes());
    for &tok in exp.command.tokens() {
        out.extend_from_slice(&tok.to_le_bytes());
    }
    out.extend_from_slice(&(exp.steps() as u32).to_le_bytes());
    for row in 0..ACTION_DIM {
        for t in 0..exp.steps() {
            out.extend_from_slice(&(exp.actions[(row, t)] as f32).to_le_bytes());
        }
    }
    out.push(exp.success as u8);
    for &v in exp.embedding.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn push_buffer(out: &mut Vec<u8>, buf: &ReplayBuffer) {
    out.push(match buf.role {
        BufferRole::Success => 1,
        BufferRole::Failure => 0,
    });
    out.extend_from_slice(&(buf.capacity as u32).to_le_bytes());
    out.extend_from_slice(&buf.insert_count.to_le_bytes());
    out.extend_from_slice(&(buf.len() as u32).to_le_bytes());
    for exp in buf.iter() {
        push_experience(out, exp);
    }
}

/// Serializes both buffers plus the encoder params that produced their
/// embeddings. Little-endian throughout; trailing CRC32 of all prior bytes.
pub fn snapshot_bytes(bufs: &DualBuffers, enc: &EncoderParams) -> Result<Vec<u8>> {
    let d_e = enc.d_e();
    for exp in bufs.success.iter().chain(bufs.failure.iter()) {
        if exp.embedding.d_e() != d_e {
            return Err(Error::DimensionMismatch {
                context: "snapshot embedding width",
                expected: d_e,
                actual: exp.embedding.d_e(),
            });
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(enc.d_sem() as u32).to_le_bytes());
    out.extend_from_slice(&(enc.d_spa() as u32).to_le_bytes());
    let params = enc.to_bytes();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    out.extend_from_slice(&params);
    push_buffer(&mut out, &bufs.success);
    push_buffer(&mut out, &bufs.failure);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes a snapshot file.
pub fn snapshot(bufs: &DualBuffers, enc: &EncoderParams, path: &Path) -> Result<()> {
    fs::write(path, snapshot_bytes(bufs, enc)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated {
            file_kind: "buffer snapshot",
        })?;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                file_kind: "buffer snapshot",
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_experience(r: &mut Reader<'_>, d_sem: usize, d_spa: usize) -> Result<Experience> {
    let stored_cycle = r.u64()?;
    let token_count = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(token_count);
    for _ in 0..token_count {
        tokens.push(r.u32()?);
    }
    let command = CommandTokens::new(tokens, DEFAULT_L_MAX.max(token_count))?;
    let steps = r.u32()? as usize;
    let mut actions = Array2::zeros((ACTION_DIM, steps));
    for row in 0..ACTION_DIM {
        for t in 0..steps {
            actions[(row, t)] = r.f32()? as f64;
        }
    }
    let success = r.u8()? != 0;
    let mut values = Vec::with_capacity(d_sem + d_spa);
    for _ in 0..d_sem + d_spa {
        values.push(r.f32()? as f64);
    }
    let embedding = Embedding::from_concat(values, d_sem)?;
    Experience::new(embedding, command, actions, success, stored_cycle)
}

fn read_buffer(r: &mut Reader<'_>, d_sem: usize, d_spa: usize) -> Result<ReplayBuffer> {
    let role = match r.u8()? {
        1 => BufferRole::Success,
        0 => BufferRole::Failure,
        _ => {
            return Err(Error::Truncated {
                file_kind: "buffer snapshot",
            })
        }
    };
    let capacity = r.u32()? as usize;
    let insert_count = r.u64()?;
    let count = r.u32()? as usize;
    let mut buf = ReplayBuffer::new(role, capacity);
    for _ in 0..count {
        buf.insert(read_experience(r, d_sem, d_spa)?)?;
    }
    buf.insert_count = insert_count;
    Ok(buf)
}

/// Parses snapshot bytes back into buffers and encoder params.
pub fn restore_bytes(bytes: &[u8]) -> Result<(DualBuffers, EncoderParams)> {
    const KIND: &str = "buffer snapshot";
    if bytes.len() < SNAPSHOT_MAGIC.len() + 8 {
        return Err(Error::Truncated { file_kind: KIND });
    }
    if &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::BadMagic { file_kind: KIND });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(Error::BadVersion {
            file_kind: KIND,
            found: version,
            expected: SNAPSHOT_VERSION,
        });
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
    let mut r = Reader {
        bytes: &bytes[..body_len],
        pos: 12,
    };
    let d_sem = r.u32()? as usize;
    let d_spa = r.u32()? as usize;
    let params_len = r.u32()? as usize;
    let params = EncoderParams::from_bytes(r.take(params_len)?)?;
    if params.d_sem() != d_sem || params.d_spa() != d_spa {
        return Err(Error::DimensionMismatch {
            context: "snapshot header dims",
            expected: d_sem + d_spa,
            actual: params.d_e(),
        });
    }
    let success = read_buffer(&mut r, d_sem, d_spa)?;
    let failure = read_buffer(&mut r, d_sem, d_spa)?;
    if success.role() != BufferRole::Success || failure.role() != BufferRole::Failure {
        return Err(Error::Truncated { file_kind: KIND });
    }
    if r.pos != body_len {
        return Err(Error::Truncated { file_kind: KIND });
    }
    Ok((DualBuffers { success, failure }, params))
}

/// Reads a snapshot file. No partial state is exposed on failure.
pub fn restore(path: &Path) -> Result<(DualBuffers, EncoderParams)> {
    restore_bytes(&fs::read(path)?)
}
