//! Similarity-based retrieval and augmented batch construction.
//!
//! Queries are unit-norm embeddings, so cosine similarity reduces to a dot
//! product. Retrieval is an exact scan: at buffer capacity 50 a brute-force
//! top-k is both exact and fast, so no approximate index is used.
//!
//! All operations here are read-only over buffer state and safe under the
//! memory module's single-writer/multi-reader contract.

use ndarray::Array2;
use rand::Rng;

use crate::encoder::{CommandTokens, Embedding};
use crate::error::{Error, Result};
use crate::memory::{temporal_weight, DecayConfig, DualBuffers, Experience, ReplayBuffer, UNIT_NORM_TOL};

/// Success retrievals sampled into each batch.
pub const POSITIVES_PER_BATCH: usize = 3;
/// Failure retrievals sampled into each batch.
pub const NEGATIVES_PER_BATCH: usize = 2;

/// A retrieved buffer entry with its scores.
#[derive(Debug, Clone)]
pub struct ScoredExperience {
    /// Position of the entry in its source buffer at retrieval time.
    pub index: usize,
    pub experience: Experience,
    /// Dot-product similarity to the query, in [-1, 1].
    pub similarity: f64,
    /// Recency weight exp(-lambda * age_in_cycles), in (0, 1].
    pub temporal_weight: f64,
    /// Probability assigned over the retrieval set; filled by [`sampling_probs`].
    pub sampling_prob: f64,
}

/// Dot-product similarity between two unit-norm embeddings.
///
/// Inputs whose norm deviates from 1 by more than 1e-6 are rejected.
pub fn similarity(q: &Embedding, e: &Embedding) -> Result<f64> {
    for emb in [q, e] {
        let norm = emb.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm { norm });
        }
    }
    q.dot(e)
}

/// Retrieval breadth: `min(5, floor(|B| / 10))`.
///
/// Zero means "skip retrieval from this buffer"; retrieval only becomes
/// meaningful once a buffer holds at least 10 entries.
pub fn k_policy(buffer_size: usize) -> usize {
    (buffer_size / 10).min(5)
}

/// Orders by similarity descending, then storage cycle descending (more
/// recent first), then buffer index ascending.
fn rank_order(a: &ScoredExperience, b: &ScoredExperience) -> std::cmp::Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(b.experience.stored_cycle().cmp(&a.experience.stored_cycle()))
        .then(a.index.cmp(&b.index))
}

/// The `k` entries most similar to `q`, each annotated with its temporal
/// weight at `current_cycle`. Result is sorted by the rank order.
pub fn top_k(
    buf: &ReplayBuffer,
    q: &Embedding,
    k: usize,
    current_cycle: u64,
    decay: &DecayConfig,
) -> Result<Vec<ScoredExperience>> {
    if k > buf.len() {
        return Err(Error::KExceedsBuffer {
            k,
            available: buf.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored = Vec::with_capacity(buf.len());
    for (index, exp) in buf.iter().enumerate() {
        let sim = similarity(q, exp.embedding())?;
        let age = current_cycle as i64 - exp.stored_cycle() as i64;
        let w = temporal_weight(age, decay)?;
        scored.push(ScoredExperience {
            index,
            experience: exp.clone(),
            similarity: sim,
            temporal_weight: w,
            sampling_prob: 0.0,
        });
    }
    // Partial selection, then order the selected prefix.
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    Ok(scored)
}

/// Fills `sampling_prob` over the retrieval set:
/// `p_i = sim_i * w_i / sum_j sim_j * w_j`.
///
/// Returns `true` when the normalizer was <= 0 and the distribution fell back
/// to uniform (callers surface this in metrics). With a positive normalizer,
/// negative products are clamped to zero so the result stays a valid
/// distribution.
pub fn sampling_probs(set: &mut [ScoredExperience]) -> Result<bool> {
    if set.is_empty() {
        return Ok(false);
    }
    let products: Vec<f64> = set
        .iter()
        .map(|s| s.similarity * s.temporal_weight)
        .collect();
    if products.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            term: "similarity x temporal weight",
        });
    }
    let raw_sum: f64 = products.iter().sum();
    if raw_sum <= 0.0 {
        let uniform = 1.0 / set.len() as f64;
        for s in set.iter_mut() {
            s.sampling_prob = uniform;
        }
        return Ok(true);
    }
    let clamped: Vec<f64> = products.iter().map(|p| p.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    for (s, p) in set.iter_mut().zip(clamped) {
        s.sampling_prob = p / sum;
    }
    Ok(false)
}

/// The item the policy is currently being trained on: a successful
/// demonstration with expert actions.
#[derive(Debug, Clone)]
pub struct CurrentItem {
    pub embedding: Embedding,
    pub command: CommandTokens,
    /// Expert action matrix, `7 x T`.
    pub expert_actions: Array2<f64>,
}

/// One training batch: the current item plus sampled retrievals.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub current: CurrentItem,
    /// Sampled success retrievals (anchor-positive candidates), at most 3.
    pub positives: Vec<ScoredExperience>,
    /// Sampled failure retrievals (negatives), at most 2.
    pub negatives: Vec<ScoredExperience>,
    /// Success-side sampling fell back to uniform.
    pub success_uniform_fallback: bool,
    /// Failure-side sampling fell back to uniform.
    pub failure_uniform_fallback: bool,
}

impl TrainBatch {
    /// Whether the contrastive path downstream will have negatives.
    pub fn has_negatives(&self) -> bool {
        !self.negatives.is_empty()
    }

    /// (current, positives, negatives) counts.
    pub fn composition(&self) -> (usize, usize, usize) {
        (1, self.positives.len(), self.negatives.len())
    }
}

/// Samples `count` items without replacement, weighted by `sampling_prob`.
/// Items keep the probability they had over the full retrieval set.
fn sample_without_replacement<R: Rng>(
    mut pool: Vec<ScoredExperience>,
    count: usize,
    rng: &mut R,
) -> Vec<ScoredExperience> {
    let mut picked = Vec::with_capacity(count.min(pool.len()));
    while picked.len() < count && !pool.is_empty() {
        let total: f64 = pool.iter().map(|s| s.sampling_prob).sum();
        let mut chosen = pool.len() - 1;
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (i, s) in pool.iter().enumerate() {
                u -= s.sampling_prob;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = rng.random_range(0..pool.len());
        }
        picked.push(pool.remove(chosen));
    }
    picked
}

/// Builds the augmented batch: current item, 3 sampled success retrievals and
/// 2 sampled failure retrievals (or all available when fewer).
///
/// Degenerate buffers never fail; they yield smaller batches which metrics
/// record as shortfalls.
pub fn build_batch<R: Rng>(
    current: CurrentItem,
    bufs: &DualBuffers,
    decay: &DecayConfig,
    current_cycle: u64,
    rng: &mut R,
) -> Result<TrainBatch> {
    let k_s = k_policy(bufs.success.len());
    let k_f = k_policy(bufs.failure.len());
    let mut retrieved_s = top_k(&bufs.success, &current.embedding, k_s, current_cycle, decay)?;
    let mut retrieved_f = top_k(&bufs.failure, &current.embedding, k_f, current_cycle, decay)?;
    let success_uniform_fallback = sampling_probs(&mut retrieved_s)?;
    let failure_uniform_fallback = sampling_probs(&mut retrieved_f)?;
    let positives = sample_without_replacement(retrieved_s, POSITIVES_PER_BATCH, rng);
    let negatives = sample_without_replacement(retrieved_f, NEGATIVES_PER_BATCH, rng);
    Ok(TrainBatch {
        current,
        positives,
        negatives,
        success_uniform_fallback,
        failure_uniform_fallback,
    })
}
