//! Experiment orchestration: pretrain on Source, pre-load the buffers,
//! deploy on Target with the adaptation trigger, then evaluate retention.
//!
//! The runner realizes the deployment loop: the pretrained-and-frozen base
//! policy is dropped into the Target domain, deployment episodes feed the
//! windowed trigger, and each fired cycle trains the adapters on freshly
//! provided expert demonstrations plus everything collected since the last
//! cycle. Evaluation rollouts use the same scene lists before and after
//! adaptation so the retention comparison is paired.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::adapt::{
    run_adaptation_cycle, should_adapt, AdaptContext, CollectedTrajectory, TriggerState,
    VariantSwitches,
};
use crate::config::{derive_seed, RunConfig, SeedStream};
use crate::encoder::{
    command_feature, compression_ratio, random_unit_embedding, storage_reduction, CommandTokens,
    Encoder, DEFAULT_L_MAX,
};
use crate::error::{Error, Result};
use crate::loss::{bc_repeated, ThclConfig};
use crate::memory::{self, DualBuffers, Experience};
use crate::metrics::{EpisodeRecord, MetricsWriter, Phase, RunMetrics};
use crate::policy::PolicyState;
use crate::retrieval::similarity;
use crate::simenv::{expert_demo, rollout, Domain, Scene, ScenarioSpec};

/// Method variants for ablation comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The complete method.
    Full,
    /// Contrastive term disabled (weight 0).
    NoContrastive,
    /// Retrieval disabled: batches contain only the current item.
    NoRetrieval,
    /// Replay disabled for training: buffers retained for metrics only.
    NoReplay,
    /// Plain fine-tuning: no buffers for training, no retrieval, no
    /// contrastive term.
    Naive,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContrastive => "no_contrastive",
            Variant::NoRetrieval => "no_retrieval",
            Variant::NoReplay => "no_replay",
            Variant::Naive => "naive",
        }
    }

    pub fn all() -> [Variant; 5] {
        [
            Variant::Full,
            Variant::NoContrastive,
            Variant::NoRetrieval,
            Variant::NoReplay,
            Variant::Naive,
        ]
    }

    pub fn parse(name: &str) -> Result<Variant> {
        Variant::all()
            .into_iter()
            .find(|v| v.label() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {name:?}; expected one of full, no_contrastive, no_retrieval, no_replay, naive"
                ))
            })
    }

    fn switches(self) -> VariantSwitches {
        match self {
            Variant::Full | Variant::NoContrastive => VariantSwitches::default(),
            Variant::NoRetrieval => VariantSwitches {
                use_retrieval: false,
                buffers_for_training: true,
            },
            Variant::NoReplay | Variant::Naive => VariantSwitches {
                use_retrieval: false,
                buffers_for_training: false,
            },
        }
    }

    fn adjust_thcl(self, mut thcl: ThclConfig) -> ThclConfig {
        if matches!(self, Variant::NoContrastive | Variant::Naive) {
            thcl.contrastive_weight = 0.0;
        }
        thcl
    }
}

/// End-of-run summary; deterministic given (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub pre_target_success: f64,
    pub pre_source_success: f64,
    pub post_target_success: f64,
    pub post_source_success: f64,
    pub deploy_success_rate: f64,
    pub cycles_used: usize,
    pub episodes_total: usize,
    pub cumulative_adapt_loss: f64,
    pub final_forgetting: f64,
    /// [triplet, infonce, none] across all cycles.
    pub thcl_path_counts: [u64; 3],
    pub memory_bytes_final: usize,
    pub trainable_params: usize,
    pub total_params: usize,
    pub trainable_fraction: f64,
    pub compression_ratio: f64,
    pub storage_reduction: f64,
    pub encoder_checksum_pre: u32,
    pub encoder_checksum_post: u32,
    pub base_checksum_pre: u32,
    pub base_checksum_post: u32,
}

/// Everything a finished run hands back to callers.
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub summary: RunSummary,
}

struct EpisodeCounter(u64);

impl EpisodeCounter {
    fn next(&mut self) -> u64 {
        let v = self.0;
        self.0 += 1;
        v
    }
}

fn record(
    metrics: &mut RunMetrics,
    writer: &mut Option<MetricsWriter>,
    rec: EpisodeRecord,
) -> Result<()> {
    if let Some(w) = writer.as_mut() {
        w.write_episode(&rec)?;
    }
    metrics.record_episode(rec);
    Ok(())
}

/// Pretrains the base network with plain behavioral cloning on Source expert
/// demonstrations, then freezes it (f32-quantized so checkpoints round-trip).
fn pretrain(
    cfg: &RunConfig,
    policy: &mut PolicyState,
    encoder: &Encoder,
    command: &CommandTokens,
) -> Result<()> {
    let exp = &cfg.experiment;
    if exp.pretrain_demos == 0 || exp.pretrain_epochs == 0 {
        policy.quantize_base_f32();
        return Ok(());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::PretrainScenes));
    let mut items = Vec::with_capacity(exp.pretrain_demos);
    // One sample per decision chunk: the policy is re-queried at chunk
    // boundaries during rollouts, so mid-trajectory states (including the
    // small final approach actions) must be covered too.
    let stride = cfg.scenario.chunk_len.unwrap_or(usize::MAX).max(1);
    let mut pretrain_scenario = cfg.scenario.clone();
    if let Some(range) = exp.pretrain_goal_distance {
        pretrain_scenario.goal_distance = range;
    }
    for _ in 0..exp.pretrain_demos {
        let scene = pretrain_scenario.sample_scene(Domain::Source, &mut rng)?;
        let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &cfg.scenario.frame_for(scene.domain), &cfg.success)?;
        let expert_actions = demo.expert_actions.as_ref().expect("expert demos carry actions");
        let mut k = 0usize;
        while k < demo.len() {
            let embedding = encoder.encode_normalized(&demo.steps[k].observation)?;
            let end = (k + stride).min(demo.len());
            let window = expert_actions.slice(ndarray::s![.., k..end]).to_owned();
            items.push((embedding, window));
            k += stride;
        }
    }
    let feature = command_feature(command, policy.d_c());
    let total_steps = exp.pretrain_epochs * items.len();
    let mut step = 0usize;
    let mut epoch_loss = 0.0;
    for _epoch in 0..exp.pretrain_epochs {
        epoch_loss = 0.0;
        for (embedding, expert_actions) in &items {
            let trace = policy.forward_trace(embedding, &feature)?;
            let (loss, mut grad) = bc_repeated(&trace.action, expert_actions)?;
            let steps = expert_actions.ncols() as f64;
            epoch_loss += loss / steps;
            grad.mapv_inplace(|v| v / steps);
            let full = policy.backward(&trace, &grad, None);
            let lr = crate::adapt::lr_schedule(step, total_steps, exp.pretrain_lr);
            policy.apply_base_update(&full, lr);
            step += 1;
        }
    }
    policy.quantize_base_f32();
    log::info!(
        "pretrain: final mean per-step bc {:.6} over {} demos",
        epoch_loss / items.len().max(1) as f64,
        items.len()
    );
    Ok(())
}

/// Runs one evaluation pass over fixed scenes; returns per-scene outcomes.
fn evaluate(
    cfg: &RunConfig,
    policy: &PolicyState,
    encoder: &Encoder,
    command: &CommandTokens,
    scenes: &[Scene],
) -> Result<Vec<(bool, usize)>> {
    scenes
        .iter()
        .map(|scene| {
            let traj = rollout(
                policy,
                encoder,
                command,
                scene,
                ScenarioSpec::effector_start(scene),
                cfg.scenario.horizon,
                cfg.scenario.chunk_len,
                &cfg.scenario.frame_for(scene.domain),
                &cfg.success,
            )?;
            Ok((traj.success, traj.len()))
        })
        .collect()
}

fn record_eval(
    outcomes: &[(bool, usize)],
    domain: Domain,
    phase: Phase,
    counter: &mut EpisodeCounter,
    metrics: &mut RunMetrics,
    writer: &mut Option<MetricsWriter>,
) -> Result<f64> {
    let mut hits = 0usize;
    for &(success, steps) in outcomes {
        if success {
            hits += 1;
        }
        record(
            metrics,
            writer,
            EpisodeRecord {
                episode_index: counter.next(),
                domain,
                phase,
                success,
                steps,
                bc_on_expert: None,
            },
        )?;
    }
    Ok(hits as f64 / outcomes.len().max(1) as f64)
}

/// Executes the two-domain scenario for one variant. When `out_dir` is set,
/// metrics.jsonl / summary.json / buffers.xprsbuf / policy.xprspol land
/// there; partial metrics are flushed even when the run errors.
pub fn execute_run(cfg: &RunConfig, variant: Variant, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut writer = match out_dir {
        Some(dir) => Some(MetricsWriter::create(&dir.join("metrics.jsonl"))?),
        None => None,
    };
    let result = run_inner(cfg, variant, &mut writer);
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    let (metrics, summary, buffers, encoder, policy) = result?;
    if let Some(dir) = out_dir {
        memory::snapshot(&buffers, encoder.params(), &dir.join("buffers.xprsbuf"))?;
        policy.save(&dir.join("policy.xprspol"))?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    Ok(RunOutcome { metrics, summary })
}

type RunState = (RunMetrics, RunSummary, DualBuffers, Encoder, PolicyState);

fn run_inner(
    cfg: &RunConfig,
    variant: Variant,
    writer: &mut Option<MetricsWriter>,
) -> Result<RunState> {
    let exp = &cfg.experiment;
    let command_for = |domain: Domain| -> crate::error::Result<CommandTokens> {
        let tokens = cfg.scenario.command_tokens_for(domain).to_vec();
        CommandTokens::new(tokens.clone(), DEFAULT_L_MAX.max(tokens.len()))
    };
    let source_command = command_for(Domain::Source)?;
    let target_command = command_for(Domain::Target)?;

    let mut encoder_cfg = cfg.encoder.clone();
    encoder_cfg.seed = derive_seed(cfg.seed ^ cfg.encoder.seed, SeedStream::EncoderParams);
    let encoder = Encoder::from_config(&encoder_cfg)?;

    let mut policy_cfg = cfg.policy.clone();
    policy_cfg.init_seed = derive_seed(cfg.seed ^ cfg.policy.init_seed, SeedStream::PolicyInit);
    let mut policy = PolicyState::new(&policy_cfg, encoder.params().d_e())?;

    log::info!(
        "run variant={} seed={}: pretraining on {} Source demos",
        variant.label(),
        cfg.seed,
        exp.pretrain_demos
    );
    pretrain(cfg, &mut policy, &encoder, &source_command)?;

    let encoder_checksum_pre = encoder.params().checksum();
    let base_checksum_pre = policy.base_checksum();

    let mut metrics = RunMetrics::default();
    let mut counter = EpisodeCounter(0);
    let mut buffers = DualBuffers::new(cfg.buffers.success_capacity, cfg.buffers.failure_capacity);
    let mut cycle_counter = 0u64;

    // Pre-load Source experiences into the success buffer.
    let mut preload_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::PreloadScenes));
    for _ in 0..exp.preload_successes {
        let scene = cfg.scenario.sample_scene(Domain::Source, &mut preload_rng)?;
        let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &cfg.scenario.frame_for(scene.domain), &cfg.success)?;
        let obs = demo.initial_observation().expect("expert demos are nonempty");
        let embedding = encoder.encode_normalized(obs)?;
        let actions = demo.expert_actions.clone().expect("expert demos carry actions");
        let steps = demo.len();
        buffers.insert(Experience::new(
            embedding,
            source_command.clone(),
            actions,
            true,
            cycle_counter,
        )?)?;
        record(
            &mut metrics,
            writer,
            EpisodeRecord {
                episode_index: counter.next(),
                domain: Domain::Source,
                phase: Phase::Preload,
                success: true,
                steps,
                bc_on_expert: None,
            },
        )?;
    }

    // Fixed evaluation scene lists, shared by the pre and post passes.
    let eval_target: Vec<Scene> = {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::EvalTargetScenes));
        (0..exp.eval_episodes)
            .map(|_| cfg.scenario.sample_scene(Domain::Target, &mut rng))
            .collect::<Result<_>>()?
    };
    let eval_source: Vec<Scene> = {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::EvalSourceScenes));
        (0..exp.eval_episodes)
            .map(|_| cfg.scenario.sample_scene(Domain::Source, &mut rng))
            .collect::<Result<_>>()?
    };

    let pre_target = record_eval(
        &evaluate(cfg, &policy, &encoder, &target_command, &eval_target)?,
        Domain::Target,
        Phase::EvalPre,
        &mut counter,
        &mut metrics,
        writer,
    )?;
    let pre_source = record_eval(
        &evaluate(cfg, &policy, &encoder, &source_command, &eval_source)?,
        Domain::Source,
        Phase::EvalPre,
        &mut counter,
        &mut metrics,
        writer,
    )?;
    log::info!(
        "pre-adaptation success: target {:.2} source {:.2}",
        pre_target,
        pre_source
    );

    // Deployment on Target.
    let mut deploy_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::DeployScenes));
    let mut demo_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::DemoScenes));
    let mut adapt_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, SeedStream::Adaptation));
    let mut trigger = TriggerState::new(exp.trigger_window, exp.trigger_threshold);
    let mut pending: Vec<CollectedTrajectory> = Vec::new();
    let mut cycles_used = 0usize;
    let mut deploy_hits = 0usize;
    let ctx = AdaptContext {
        encoder: &encoder,
        thcl: variant.adjust_thcl(cfg.thcl),
        train: &cfg.train,
        decay: &cfg.decay,
        switches: variant.switches(),
    };

    for _ in 0..exp.max_episodes {
        let scene = cfg.scenario.sample_scene(Domain::Target, &mut deploy_rng)?;
        let mut traj = rollout(
            &policy,
            &encoder,
            &target_command,
            &scene,
            ScenarioSpec::effector_start(&scene),
            cfg.scenario.horizon,
            cfg.scenario.chunk_len,
            &cfg.scenario.frame_for(Domain::Target),
            &cfg.success,
        )?;
        let success = traj.success;
        let steps = traj.len();
        let mut bc_on_expert = None;
        if success {
            deploy_hits += 1;
            // The environment supplies expert demonstrations for successes.
            let expert = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &cfg.scenario.frame_for(scene.domain), &cfg.success)?;
            let expert_actions = expert.expert_actions.expect("expert demos carry actions");
            let obs = traj.initial_observation().expect("rollouts are nonempty");
            let embedding = encoder.encode_normalized(obs)?;
            let feature = command_feature(&target_command, policy.d_c());
            let (action, _) = policy.forward(&embedding, &feature)?;
            bc_on_expert = Some(bc_repeated(&action, &expert_actions)?.0);
            traj.expert_actions = Some(expert_actions);
        }
        record(
            &mut metrics,
            writer,
            EpisodeRecord {
                episode_index: counter.next(),
                domain: Domain::Target,
                phase: Phase::Deploy,
                success,
                steps,
                bc_on_expert,
            },
        )?;
        pending.push(CollectedTrajectory {
            trajectory: traj,
            command: target_command.clone(),
        });
        trigger.push(success);

        if should_adapt(&trigger) && cycles_used < exp.max_cycles {
            // The target domain provides sparse expert demonstrations for the
            // cycle; collected deployment episodes ride along.
            for _ in 0..exp.demos_per_cycle {
                let demo_scene = cfg.scenario.sample_scene(Domain::Target, &mut demo_rng)?;
                let demo = expert_demo(&demo_scene, ScenarioSpec::effector_start(&demo_scene), &cfg.scenario.frame_for(demo_scene.domain), &cfg.success)?;
                record(
                    &mut metrics,
                    writer,
                    EpisodeRecord {
                        episode_index: counter.next(),
                        domain: Domain::Target,
                        phase: Phase::Demo,
                        success: true,
                        steps: demo.len(),
                        bc_on_expert: None,
                    },
                )?;
                pending.push(CollectedTrajectory {
                    trajectory: demo,
                    command: target_command.clone(),
                });
            }
            let report = run_adaptation_cycle(
                &pending,
                &mut policy,
                &mut buffers,
                &mut cycle_counter,
                &ctx,
                &mut adapt_rng,
            )?;
            if let Some(w) = writer.as_mut() {
                w.write_cycle(&report)?;
            }
            metrics.record_cycle(report);
            pending.clear();
            trigger.clear();
            cycles_used += 1;
        }
    }

    let post_target = record_eval(
        &evaluate(cfg, &policy, &encoder, &target_command, &eval_target)?,
        Domain::Target,
        Phase::EvalPost,
        &mut counter,
        &mut metrics,
        writer,
    )?;
    let post_source = record_eval(
        &evaluate(cfg, &policy, &encoder, &source_command, &eval_source)?,
        Domain::Source,
        Phase::EvalPost,
        &mut counter,
        &mut metrics,
        writer,
    )?;
    log::info!(
        "post-adaptation success: target {:.2} source {:.2} after {} cycles",
        post_target,
        post_source,
        cycles_used
    );

    let d_e = encoder.params().d_e();
    let summary = RunSummary {
        variant: variant.label().to_string(),
        seed: cfg.seed,
        pre_target_success: pre_target,
        pre_source_success: pre_source,
        post_target_success: post_target,
        post_source_success: post_source,
        deploy_success_rate: deploy_hits as f64 / exp.max_episodes.max(1) as f64,
        cycles_used,
        episodes_total: metrics.episodes.len(),
        cumulative_adapt_loss: metrics.cumulative_adapt_loss(),
        final_forgetting: metrics.final_forgetting(),
        thcl_path_counts: metrics.thcl_path_counts(),
        memory_bytes_final: buffers.memory_usage(),
        trainable_params: policy.trainable_param_count(),
        total_params: policy.total_param_count(),
        trainable_fraction: policy.trainable_param_count() as f64
            / policy.total_param_count() as f64,
        compression_ratio: compression_ratio(d_e),
        storage_reduction: storage_reduction(d_e),
        encoder_checksum_pre,
        encoder_checksum_post: encoder.params().checksum(),
        base_checksum_pre,
        base_checksum_post: policy.base_checksum(),
    };
    Ok((metrics, summary, buffers, encoder, policy))
}

/// One row per variant, all on the identical (config, seed).
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub seed: u64,
    pub rows: Vec<RunSummary>,
}

impl ComparisonSummary {
    /// Plain-text table for terminal output.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>11} {:>11} {:>7} {:>22}\n",
            "variant", "pre_tgt", "post_tgt", "pre_src", "post_src", "cycles", "thcl(t/i/n)"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9.1}% {:>9.1}% {:>10.1}% {:>10.1}% {:>7} {:>22}\n",
                row.variant,
                row.pre_target_success * 100.0,
                row.post_target_success * 100.0,
                row.pre_source_success * 100.0,
                row.post_source_success * 100.0,
                row.cycles_used,
                format!(
                    "{}/{}/{}",
                    row.thcl_path_counts[0], row.thcl_path_counts[1], row.thcl_path_counts[2]
                ),
            ));
        }
        out
    }
}

/// Runs every requested variant on the identical config and seed.
pub fn compare_runs(
    cfg: &RunConfig,
    variants: &[Variant],
    out_dir: Option<&Path>,
) -> Result<ComparisonSummary> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let sub: Option<PathBuf> = out_dir.map(|d| d.join(variant.label()));
        let outcome = execute_run(cfg, variant, sub.as_deref())?;
        rows.push(outcome.summary);
    }
    let comparison = ComparisonSummary {
        seed: cfg.seed,
        rows,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("comparison.json"),
            serde_json::to_string_pretty(&comparison)?,
        )?;
    }
    Ok(comparison)
}

/// Buffer-snapshot statistics for the inspect command: counts, age
/// histograms, memory usage, and an optional similarity spectrum against a
/// seeded random unit query.
pub fn inspect_snapshot(path: &Path, query_seed: Option<u64>) -> Result<serde_json::Value> {
    let (buffers, params) = memory::restore(path)?;
    let mut doc = serde_json::Map::new();
    doc.insert("d_sem".into(), params.d_sem().into());
    doc.insert("d_spa".into(), params.d_spa().into());
    doc.insert(
        "memory_bytes".into(),
        (buffers.memory_usage() as u64).into(),
    );

    let query = query_seed
        .map(|seed| random_unit_embedding(params.d_sem(), params.d_spa(), seed))
        .transpose()?;

    for (name, buf) in [("success", &buffers.success), ("failure", &buffers.failure)] {
        let mut section = serde_json::Map::new();
        section.insert("count".into(), buf.len().into());
        section.insert("capacity".into(), buf.capacity().into());
        section.insert("insert_count".into(), buf.insert_count().into());
        let mut ages = std::collections::BTreeMap::<u64, usize>::new();
        for exp in buf.iter() {
            *ages.entry(exp.stored_cycle()).or_default() += 1;
        }
        section.insert(
            "stored_cycle_histogram".into(),
            serde_json::to_value(&ages)?,
        );
        if let Some(q) = &query {
            if !buf.is_empty() {
                let mut sims: Vec<f64> = buf
                    .iter()
                    .map(|e| similarity(q, e.embedding()))
                    .collect::<Result<_>>()?;
                sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mean = sims.iter().sum::<f64>() / sims.len() as f64;
                section.insert(
                    "similarity_spectrum".into(),
                    serde_json::json!({
                        "min": sims[0],
                        "median": sims[sims.len() / 2],
                        "max": sims[sims.len() - 1],
                        "mean": mean,
                    }),
                );
            }
        }
        doc.insert(name.into(), serde_json::Value::Object(section));
    }
    Ok(serde_json::Value::Object(doc))
}
