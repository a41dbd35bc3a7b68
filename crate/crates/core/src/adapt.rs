//! The online adaptation loop: trigger detection, the per-cycle training
//! procedure, and cycle bookkeeping.
//!
//! A cycle runs single-threaded with exclusive access to the buffers and the
//! policy: encode collected trajectories, insert them into the role-matched
//! buffers, then train on the successful ones with retrieval-augmented
//! batches, plain SGD, gradient accumulation, per-component clipping and
//! decoupled weight decay on the adapter factors only. Buffer inserts are
//! facts about the world and are never rolled back; a failed cycle restores
//! the adapter factors to their pre-cycle state.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{command_feature, CommandTokens, Encoder};
use crate::error::{Error, Result};
use crate::loss::{bc_repeated, loss_gradients, ContrastivePath, ThclConfig};
use crate::memory::{DecayConfig, DualBuffers, Experience, ReplayBuffer};
use crate::policy::{AdamState, AdapterGrads, PolicyState};
use crate::retrieval::{build_batch, CurrentItem, TrainBatch};
use crate::simenv::Trajectory;

/// Windowed success-rate trigger state.
#[derive(Debug, Clone)]
pub struct TriggerState {
    window: VecDeque<bool>,
    window_size: usize,
    threshold_adapt: f64,
}

impl TriggerState {
    pub fn new(window_size: usize, threshold_adapt: f64) -> Self {
        Self {
            window: VecDeque::with_capacity(window_size),
            window_size,
            threshold_adapt,
        }
    }

    /// Records the outcome of one attempt.
    pub fn push(&mut self, success: bool) {
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(success);
    }

    /// Drops all recorded outcomes (used after an adaptation cycle so the
    /// trigger re-evaluates fresh post-update performance).
    pub fn clear(&mut self) {
        self.window.clear();
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.window_size
    }

    pub fn mean(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
    }
}

/// True iff the window is full and its mean success rate is strictly below
/// the threshold. The fullness guard avoids premature updates from isolated
/// early failures.
pub fn should_adapt(ts: &TriggerState) -> bool {
    ts.is_full() && ts.mean() < ts.threshold_adapt
}

/// Optimization hyperparameters for adaptation cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate (cosine-decayed within each cycle).
    pub learning_rate: f64,
    pub epochs: usize,
    pub accumulation_steps: usize,
    /// Per-component gradient clamp.
    pub clip_inf_norm: f64,
    /// Decoupled weight decay on adapter factors only.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            // Desk-scale default; the 7B-scale value 2e-5 remains available
            // through config.
            learning_rate: 1e-2,
            epochs: 2,
            accumulation_steps: 8,
            clip_inf_norm: 1.0,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.epochs == 0
            || self.accumulation_steps == 0
            || self.clip_inf_norm <= 0.0
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "train config values must be positive (weight_decay >= 0)".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine decay: `eta0 * 0.5 * (1 + cos(pi * step / total_steps))`.
/// Equals `eta0` at step 0 and 0 at `step == total_steps`; non-increasing.
pub fn lr_schedule(step: usize, total_steps: usize, eta0: f64) -> f64 {
    let frac = step as f64 / total_steps.max(1) as f64;
    eta0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Per-component clamp enforcing the infinity-norm constraint. Components
/// already inside the limit are unchanged.
pub fn clip_gradients(grads: &mut AdapterGrads, limit: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            term: "gradients before clipping",
        });
    }
    for slot in grads.layers.iter_mut().flatten() {
        slot.0.mapv_inplace(|v| v.clamp(-limit, limit));
        slot.1.mapv_inplace(|v| v.clamp(-limit, limit));
    }
    Ok(())
}

/// A trajectory collected during deployment together with its command.
#[derive(Debug, Clone)]
pub struct CollectedTrajectory {
    pub trajectory: Trajectory,
    pub command: CommandTokens,
}

/// Ablation switches threading through the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSwitches {
    /// When false, batches contain only the current item.
    pub use_retrieval: bool,
    /// When false, buffers are kept for metrics but not consulted while
    /// training (batches contain only the current item).
    pub buffers_for_training: bool,
}

impl Default for VariantSwitches {
    fn default() -> Self {
        Self {
            use_retrieval: true,
            buffers_for_training: true,
        }
    }
}

/// Everything a cycle needs besides the mutable policy/buffer state.
pub struct AdaptContext<'a> {
    pub encoder: &'a Encoder,
    pub thcl: ThclConfig,
    pub train: &'a TrainConfig,
    pub decay: &'a DecayConfig,
    pub switches: VariantSwitches,
}

/// Per-cycle summary emitted to the metrics stream.
///
/// `wall_time_secs` is measured but excluded from serialization so metrics
/// files stay byte-identical across reruns of the same seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub cycle_index: u64,
    pub trajectories_used: usize,
    pub batches: usize,
    pub optimizer_steps: usize,
    pub mean_total_loss: f64,
    /// Fraction of contrastive evaluations that took the triplet path.
    pub triplet_fraction: f64,
    /// Mean behavioral-cloning term across this cycle's batches.
    pub adapt_loss_metric: f64,
    pub forgetting_metric: f64,
    pub memory_bytes: usize,
    /// Contrastive path counts: [triplet, infonce, none].
    pub thcl_path_counts: [u64; 3],
    /// Batches whose sampling fell back to the uniform distribution.
    pub uniform_fallbacks: u64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Mean behavioral-cloning loss of the current policy across the success
/// buffer, from stored embeddings and expert actions. Empty buffer: 0.
pub fn forgetting_metric(policy: &PolicyState, success_buffer: &ReplayBuffer) -> Result<f64> {
    if success_buffer.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for exp in success_buffer.iter() {
        let feature = command_feature(exp.command(), policy.d_c());
        let (action, _h) = policy.forward(exp.embedding(), &feature)?;
        let (loss, _grad) = bc_repeated(&action, exp.actions())?;
        total += loss;
    }
    Ok(total / success_buffer.len() as f64)
}

struct TrainStats {
    batches: usize,
    optimizer_steps: usize,
    sum_total: f64,
    sum_bc: f64,
    path_counts: [u64; 3],
    uniform_fallbacks: u64,
}

fn train_on_items<R: Rng>(
    items: &[CurrentItem],
    policy: &mut PolicyState,
    buffers: &DualBuffers,
    current_cycle: u64,
    ctx: &AdaptContext<'_>,
    rng: &mut R,
) -> Result<TrainStats> {
    let cfg = ctx.train;
    let total_batches = cfg.epochs * items.len();
    let total_steps = total_batches.div_ceil(cfg.accumulation_steps);
    let mut stats = TrainStats {
        batches: 0,
        optimizer_steps: 0,
        sum_total: 0.0,
        sum_bc: 0.0,
        path_counts: [0; 3],
        uniform_fallbacks: 0,
    };
    let mut accum = AdapterGrads::zeros_like(policy);
    let mut accum_count = 0usize;
    let mut opt = AdamState::new(policy);
    let use_buffers = ctx.switches.use_retrieval && ctx.switches.buffers_for_training;
    for _epoch in 0..cfg.epochs {
        for item in items {
            let batch = if use_buffers {
                build_batch(item.clone(), buffers, ctx.decay, current_cycle, rng)?
            } else {
                TrainBatch {
                    current: item.clone(),
                    positives: Vec::new(),
                    negatives: Vec::new(),
                    success_uniform_fallback: false,
                    failure_uniform_fallback: false,
                }
            };
            if batch.success_uniform_fallback || batch.failure_uniform_fallback {
                stats.uniform_fallbacks += 1;
            }
            let (report, grads) = loss_gradients(&batch, policy, &ctx.thcl)?;
            stats.batches += 1;
            stats.sum_total += report.total;
            stats.sum_bc += report.bc;
            match report.selected {
                ContrastivePath::TripletPath => stats.path_counts[0] += 1,
                ContrastivePath::InfoNCEPath => stats.path_counts[1] += 1,
                ContrastivePath::NoContrastive => stats.path_counts[2] += 1,
            }
            accum.add_assign(&grads);
            accum_count += 1;
            if accum_count == cfg.accumulation_steps {
                apply_step(policy, &mut accum, &mut opt, accum_count, stats.optimizer_steps, total_steps, cfg)?;
                accum = AdapterGrads::zeros_like(policy);
                accum_count = 0;
                stats.optimizer_steps += 1;
            }
        }
    }
    if accum_count > 0 {
        // Trailing partial group, scaled by its actual count.
        apply_step(policy, &mut accum, &mut opt, accum_count, stats.optimizer_steps, total_steps, cfg)?;
        stats.optimizer_steps += 1;
    }
    Ok(stats)
}

fn apply_step(
    policy: &mut PolicyState,
    accum: &mut AdapterGrads,
    opt: &mut AdamState,
    count: usize,
    step_index: usize,
    total_steps: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    accum.scale(1.0 / count as f64);
    clip_gradients(accum, cfg.clip_inf_norm)?;
    let lr = lr_schedule(step_index, total_steps, cfg.learning_rate);
    policy.apply_adapter_update_adam(accum, opt, lr, cfg.weight_decay);
    Ok(())
}

/// Executes one adaptation cycle over the collected trajectories.
///
/// In order: (1) encode and normalize each trajectory's initial observation,
/// (2) insert the experiences into the role-matched buffers (successes store
/// expert actions, failures the executed ones), (3) train over the successful
/// trajectories for the configured epochs, (4) advance the global cycle
/// counter, (5) report.
///
/// On error the adapter factors are restored to their pre-cycle state and the
/// cycle counter is left unchanged; buffer inserts that already happened are
/// kept.
pub fn run_adaptation_cycle<R: Rng>(
    collected: &[CollectedTrajectory],
    policy: &mut PolicyState,
    buffers: &mut DualBuffers,
    current_cycle: &mut u64,
    ctx: &AdaptContext<'_>,
    rng: &mut R,
) -> Result<CycleReport> {
    let started = Instant::now();
    ctx.train.validate()?;
    ctx.thcl.validate()?;
    if collected.is_empty() {
        return Err(Error::Config(
            "adaptation cycle requires at least one collected trajectory".into(),
        ));
    }

    let adapter_backup = policy.adapter_snapshot();
    let outcome = (|| -> Result<(Vec<CurrentItem>, TrainStats)> {
        // Encode + insert.
        let mut items = Vec::new();
        for collected_traj in collected {
            let traj = &collected_traj.trajectory;
            let obs = traj.initial_observation().ok_or(Error::Config(
                "collected trajectory has no steps".into(),
            ))?;
            let embedding = ctx.encoder.encode_normalized(obs)?;
            let actions = if traj.success {
                traj.expert_actions.clone().ok_or(Error::Config(
                    "successful trajectory is missing expert actions".into(),
                ))?
            } else {
                traj.executed_actions()
            };
            let experience = Experience::new(
                embedding.clone(),
                collected_traj.command.clone(),
                actions.clone(),
                traj.success,
                *current_cycle,
            )?;
            buffers.insert(experience)?;
            if traj.success {
                items.push(CurrentItem {
                    embedding,
                    command: collected_traj.command.clone(),
                    expert_actions: actions,
                });
            }
        }
        // Train on successes only (failures contribute through retrieval).
        let stats = train_on_items(&items, policy, buffers, *current_cycle, ctx, rng)?;
        Ok((items, stats))
    })();

    let (items, stats) = match outcome {
        Ok(v) => v,
        Err(e) => {
            policy.restore_adapters(adapter_backup);
            return Err(e);
        }
    };

    let cycle_index = *current_cycle;
    *current_cycle += 1;

    let contrastive_evals = stats.path_counts[0] + stats.path_counts[1];
    let report = CycleReport {
        cycle_index,
        trajectories_used: collected.len(),
        batches: stats.batches,
        optimizer_steps: stats.optimizer_steps,
        mean_total_loss: if stats.batches > 0 {
            stats.sum_total / stats.batches as f64
        } else {
            0.0
        },
        triplet_fraction: if contrastive_evals > 0 {
            stats.path_counts[0] as f64 / contrastive_evals as f64
        } else {
            0.0
        },
        adapt_loss_metric: if stats.batches > 0 {
            stats.sum_bc / stats.batches as f64
        } else {
            0.0
        },
        forgetting_metric: forgetting_metric(policy, &buffers.success)?,
        memory_bytes: buffers.memory_usage(),
        thcl_path_counts: stats.path_counts,
        uniform_fallbacks: stats.uniform_fallbacks,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    log::debug!(
        "cycle {} done: {} trajectories ({} trained), {} batches, {} steps in {:.3}s",
        report.cycle_index,
        report.trajectories_used,
        items.len(),
        report.batches,
        report.optimizer_steps,
        report.wall_time_secs,
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{normalize, Embedding, EncoderConfig, DEFAULT_L_MAX};
    use crate::memory::ACTION_DIM;
    use crate::policy::PolicyConfig;
    use crate::simenv::{expert_demo, ControlFrame, Domain, ScenarioSpec, SuccessConfig};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn trigger_threshold_cases() {
        let mut ts = TriggerState::new(10, 0.8);
        for i in 0..10 {
            ts.push(i < 7);
        }
        assert!(should_adapt(&ts), "7/10 < 0.8 fires");

        let mut ts = TriggerState::new(10, 0.8);
        for i in 0..10 {
            ts.push(i < 8);
        }
        assert!(!should_adapt(&ts), "8/10 is not strictly below 0.8");

        let mut ts = TriggerState::new(10, 0.8);
        for _ in 0..9 {
            ts.push(false);
        }
        assert!(!should_adapt(&ts), "window not full");
    }

    #[test]
    fn trigger_window_slides() {
        let mut ts = TriggerState::new(4, 0.8);
        for _ in 0..4 {
            ts.push(false);
        }
        assert!(should_adapt(&ts));
        for _ in 0..4 {
            ts.push(true);
        }
        assert!(!should_adapt(&ts), "old failures slid out");
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        let eta0 = 2e-5;
        assert_eq!(lr_schedule(0, 10, eta0), eta0);
        assert_eq!(lr_schedule(10, 10, eta0), 0.0);
        assert!((lr_schedule(5, 10, eta0) - eta0 / 2.0).abs() < 1e-12 * eta0);
        let mut prev = f64::INFINITY;
        for s in 0..=10 {
            let lr = lr_schedule(s, 10, eta0);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn clip_clamps_components() {
        let policy = PolicyState::new(&PolicyConfig::default(), 8).unwrap();
        let mut grads = AdapterGrads::zeros_like(&policy);
        {
            let slot = grads.layers[1].as_mut().unwrap();
            slot.0[(0, 0)] = 3.5;
            slot.0[(1, 0)] = -2.0;
            slot.1[(0, 0)] = 0.25;
        }
        clip_gradients(&mut grads, 1.0).unwrap();
        let slot = grads.layers[1].as_ref().unwrap();
        assert_eq!(slot.0[(0, 0)], 1.0);
        assert_eq!(slot.0[(1, 0)], -1.0);
        assert_eq!(slot.1[(0, 0)], 0.25, "inside the limit: unchanged");

        let mut bad = AdapterGrads::zeros_like(&policy);
        bad.layers[1].as_mut().unwrap().0[(0, 0)] = f64::NAN;
        assert!(matches!(
            clip_gradients(&mut bad, 1.0),
            Err(Error::NonFinite { .. })
        ));
    }

    fn small_encoder() -> Encoder {
        Encoder::from_config(&EncoderConfig {
            d_sem: 12,
            d_spa: 4,
            grid: 7,
            seed: 21,
        })
        .unwrap()
    }

    fn small_policy() -> PolicyState {
        PolicyState::new(
            &PolicyConfig {
                d_c: 4,
                hidden: 8,
                d_h: 8,
                lora_rank: 2,
                adapted_layers: vec![0, 1],
                init_seed: 9,
                lora_init_sigma: 0.01,
            },
            16,
        )
        .unwrap()
    }

    fn collect_demos(n: usize, success: bool, seed: u64) -> Vec<CollectedTrajectory> {
        let spec = ScenarioSpec::default();
        let cfg = SuccessConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let command = CommandTokens::new(vec![4, 19], DEFAULT_L_MAX).unwrap();
        (0..n)
            .map(|_| {
                let scene = spec.sample_scene(Domain::Source, &mut rng).unwrap();
                let mut traj = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &ControlFrame::default(), &cfg).unwrap();
                if !success {
                    traj.success = false;
                    traj.expert_actions = None;
                }
                CollectedTrajectory {
                    trajectory: traj,
                    command: command.clone(),
                }
            })
            .collect()
    }

    fn ctx<'a>(
        encoder: &'a Encoder,
        train: &'a TrainConfig,
        decay: &'a DecayConfig,
    ) -> AdaptContext<'a> {
        AdaptContext {
            encoder,
            thcl: ThclConfig::default(),
            train,
            decay,
            switches: VariantSwitches::default(),
        }
    }

    #[test]
    fn cycle_with_only_failures_updates_buffers_but_not_policy() {
        let encoder = small_encoder();
        let mut policy = small_policy();
        let before = policy.adapter_snapshot();
        let mut buffers = DualBuffers::new(50, 50);
        let mut cycle = 0u64;
        let train = TrainConfig::default();
        let decay = DecayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let collected = collect_demos(3, false, 5);
        let report = run_adaptation_cycle(
            &collected,
            &mut policy,
            &mut buffers,
            &mut cycle,
            &ctx(&encoder, &train, &decay),
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.batches, 0);
        assert_eq!(report.optimizer_steps, 0);
        assert_eq!(buffers.failure.len(), 3);
        assert_eq!(buffers.success.len(), 0);
        assert_eq!(cycle, 1);
        assert_eq!(policy.adapter_snapshot(), before);
    }

    #[test]
    fn step_count_arithmetic_for_twelve_single_step_trajectories() {
        let encoder = small_encoder();
        let mut policy = small_policy();
        let mut buffers = DualBuffers::new(50, 50);
        let mut cycle = 0u64;
        let train = TrainConfig {
            epochs: 2,
            accumulation_steps: 8,
            ..Default::default()
        };
        let decay = DecayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // Single-step demos: scenes where the object starts at the goal.
        let command = CommandTokens::new(vec![4, 19], DEFAULT_L_MAX).unwrap();
        let cfg = SuccessConfig::default();
        let collected: Vec<CollectedTrajectory> = (0..12)
            .map(|i| {
                let p = 0.3 + (i as f64) * 0.03;
                let scene = crate::simenv::Scene::new(
                    [p, 0.5, 0.5],
                    [p, 0.5, 0.5],
                    Domain::Source,
                    crate::simenv::VisualStyle::default(),
                    i as u64,
                )
                .unwrap();
                let traj = expert_demo(&scene, [p - 0.01, 0.5, 0.5], &ControlFrame::default(), &cfg).unwrap();
                assert_eq!(traj.len(), 1);
                CollectedTrajectory {
                    trajectory: traj,
                    command: command.clone(),
                }
            })
            .collect();
        let report = run_adaptation_cycle(
            &collected,
            &mut policy,
            &mut buffers,
            &mut cycle,
            &ctx(&encoder, &train, &decay),
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.batches, 24, "2 epochs x 12 trajectories");
        assert_eq!(report.optimizer_steps, 3, "ceil(24 / 8)");
        assert_eq!(report.trajectories_used, 12);
    }

    #[test]
    fn cycle_is_deterministic_given_seed() {
        let encoder = small_encoder();
        let train = TrainConfig::default();
        let decay = DecayConfig::default();
        let run = || {
            let mut policy = small_policy();
            let mut buffers = DualBuffers::new(50, 50);
            let mut cycle = 0u64;
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            // Pre-fill with enough entries that retrieval participates.
            let preload = collect_demos(12, true, 99);
            run_adaptation_cycle(
                &preload,
                &mut policy,
                &mut buffers,
                &mut cycle,
                &ctx(&encoder, &train, &decay),
                &mut rng,
            )
            .unwrap();
            let failures = collect_demos(11, false, 41);
            run_adaptation_cycle(
                &failures,
                &mut policy,
                &mut buffers,
                &mut cycle,
                &ctx(&encoder, &train, &decay),
                &mut rng,
            )
            .unwrap();
            let collected = collect_demos(5, true, 3);
            let report = run_adaptation_cycle(
                &collected,
                &mut policy,
                &mut buffers,
                &mut cycle,
                &ctx(&encoder, &train, &decay),
                &mut rng,
            )
            .unwrap();
            (serde_json::to_string(&report).unwrap(), policy.adapter_snapshot())
        };
        let (report_a, adapters_a) = run();
        let (report_b, adapters_b) = run();
        assert_eq!(report_a, report_b);
        assert_eq!(adapters_a, adapters_b);
    }

    #[test]
    fn cycle_uses_contrastive_paths_once_failures_are_retrievable() {
        let encoder = small_encoder();
        let mut policy = small_policy();
        let mut buffers = DualBuffers::new(50, 50);
        let mut cycle = 0u64;
        let train = TrainConfig::default();
        let decay = DecayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let c = ctx(&encoder, &train, &decay);
        // Ten failures make k_policy(|B_f|) = 1.
        run_adaptation_cycle(
            &collect_demos(10, false, 11),
            &mut policy,
            &mut buffers,
            &mut cycle,
            &c,
            &mut rng,
        )
        .unwrap();
        // Ten successes likewise enable positive retrieval.
        run_adaptation_cycle(
            &collect_demos(10, true, 12),
            &mut policy,
            &mut buffers,
            &mut cycle,
            &c,
            &mut rng,
        )
        .unwrap();
        let report = run_adaptation_cycle(
            &collect_demos(4, true, 13),
            &mut policy,
            &mut buffers,
            &mut cycle,
            &c,
            &mut rng,
        )
        .unwrap();
        let contrastive = report.thcl_path_counts[0] + report.thcl_path_counts[1];
        assert!(contrastive > 0, "negatives retrieved, contrastive active: {report:?}");
        assert!(report.triplet_fraction >= 0.0 && report.triplet_fraction <= 1.0);
    }

    #[test]
    fn failed_cycle_rolls_back_adapters_and_keeps_inserts() {
        let encoder = small_encoder();
        let mut policy = small_policy();
        let mut buffers = DualBuffers::new(50, 50);
        let mut cycle = 0u64;
        let train = TrainConfig::default();
        let decay = DecayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let c = ctx(&encoder, &train, &decay);

        // Nine valid failures, then one with a mismatched embedding width:
        // retrieval scans the whole buffer during training and errors.
        run_adaptation_cycle(
            &collect_demos(9, false, 21),
            &mut policy,
            &mut buffers,
            &mut cycle,
            &c,
            &mut rng,
        )
        .unwrap();
        let mut values = vec![0.0; 8];
        values[0] = 1.0;
        let bad = Experience::new(
            normalize(&Embedding::from_concat(values, 6).unwrap()).unwrap(),
            CommandTokens::new(vec![1], DEFAULT_L_MAX).unwrap(),
            Array2::zeros((ACTION_DIM, 1)),
            false,
            0,
        )
        .unwrap();
        buffers.failure.insert(bad).unwrap();
        assert_eq!(buffers.failure.len(), 10);

        let before_adapters = policy.adapter_snapshot();
        let before_cycle = cycle;
        let before_success_len = buffers.success.len();
        let collected = collect_demos(2, true, 33);
        let err = run_adaptation_cycle(
            &collected,
            &mut policy,
            &mut buffers,
            &mut cycle,
            &c,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert_eq!(policy.adapter_snapshot(), before_adapters, "adapters rolled back");
        assert_eq!(cycle, before_cycle, "counter untouched on failure");
        assert_eq!(
            buffers.success.len(),
            before_success_len + 2,
            "inserts are not rolled back"
        );
    }

    #[test]
    fn forgetting_metric_zero_cases() {
        let policy = small_policy();
        let buffers = DualBuffers::new(8, 8);
        assert_eq!(forgetting_metric(&policy, &buffers.success).unwrap(), 0.0);
    }

    #[test]
    fn training_changes_adapters_when_successes_exist() {
        let encoder = small_encoder();
        let mut policy = small_policy();
        let before = policy.adapter_snapshot();
        let mut buffers = DualBuffers::new(50, 50);
        let mut cycle = 0u64;
        let train = TrainConfig::default();
        let decay = DecayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        run_adaptation_cycle(
            &collect_demos(4, true, 8),
            &mut policy,
            &mut buffers,
            &mut cycle,
            &ctx(&encoder, &train, &decay),
            &mut rng,
        )
        .unwrap();
        assert_ne!(policy.adapter_snapshot(), before);
        assert_eq!(buffers.success.len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// The trigger is exactly the windowed predicate with the
            /// fullness guard.
            #[test]
            fn trigger_matches_predicate(flags in proptest::collection::vec(proptest::bool::ANY, 0..24)) {
                let mut ts = TriggerState::new(10, 0.8);
                for &f in &flags {
                    ts.push(f);
                }
                let window: Vec<bool> = flags.iter().rev().take(10).rev().copied().collect();
                let expected = window.len() == 10
                    && (window.iter().filter(|&&s| s).count() as f64 / 10.0) < 0.8;
                prop_assert_eq!(should_adapt(&ts), expected);
            }

            #[test]
            fn schedule_is_within_bounds(step in 0usize..100, total in 1usize..100) {
                prop_assume!(step <= total);
                let lr = lr_schedule(step, total, 1.0);
                prop_assert!((0.0..=1.0).contains(&lr));
            }
        }
    }
}
