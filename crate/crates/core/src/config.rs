//! Run configuration: one JSON document aggregating every module's settings.
//!
//! Unknown keys are rejected at every level so a typo'd config fails loudly
//! instead of silently running with defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::TrainConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::ThclConfig;
use crate::memory::DecayConfig;
use crate::policy::PolicyConfig;
use crate::simenv::{ScenarioSpec, SuccessConfig};

/// Buffer capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    pub success_capacity: usize,
    pub failure_capacity: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            success_capacity: 50,
            failure_capacity: 50,
        }
    }
}

/// Experiment phases and budgets for the two-domain scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Source demonstrations used to pretrain the base policy.
    pub pretrain_demos: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Goal-distance range for pretraining scenes; widening it below the
    /// task range covers close-approach states. Absent = the scenario range.
    #[serde(default)]
    pub pretrain_goal_distance: Option<[f64; 2]>,
    /// Source experiences pre-loaded into the success buffer before deployment.
    pub preload_successes: usize,
    /// Target deployment episodes.
    pub max_episodes: usize,
    /// Adaptation-cycle budget.
    pub max_cycles: usize,
    /// Expert demonstrations provided per adaptation cycle.
    pub demos_per_cycle: usize,
    /// Trigger window size.
    pub trigger_window: usize,
    /// Trigger success-rate threshold.
    pub trigger_threshold: f64,
    /// Evaluation rollouts per domain, before and after adaptation.
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pretrain_demos: 24,
            pretrain_epochs: 300,
            pretrain_lr: 0.05,
            pretrain_goal_distance: None,
            preload_successes: 40,
            max_episodes: 140,
            max_cycles: 10,
            demos_per_cycle: 12,
            trigger_window: 10,
            trigger_threshold: 0.8,
            eval_episodes: 30,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trigger_window == 0 || self.eval_episodes == 0 {
            return Err(Error::Config(
                "trigger_window and eval_episodes must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.trigger_threshold) {
            return Err(Error::Config("trigger_threshold must be in [0, 1]".into()));
        }
        if self.demos_per_cycle == 0 {
            return Err(Error::Config("demos_per_cycle must be >= 1".into()));
        }
        Ok(())
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stochastic stream derives from it.
    pub seed: u64,
    /// Output directory (CLI `--out` overrides).
    pub out_dir: PathBuf,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub buffers: BufferConfig,
    pub decay: DecayConfig,
    pub thcl: ThclConfig,
    pub train: TrainConfig,
    pub success: SuccessConfig,
    pub scenario: ScenarioSpec,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("xprs-out"),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            buffers: BufferConfig::default(),
            decay: DecayConfig::default(),
            thcl: ThclConfig::default(),
            train: TrainConfig::default(),
            success: SuccessConfig::default(),
            scenario: ScenarioSpec::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file, rejecting unknown keys.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        self.thcl.validate()?;
        self.train.validate()?;
        self.success.validate()?;
        self.scenario.validate()?;
        self.policy.validate()?;
        self.experiment.validate()?;
        if self.buffers.success_capacity == 0 || self.buffers.failure_capacity == 0 {
            return Err(Error::Config("buffer capacities must be >= 1".into()));
        }
        if self.scenario.command_tokens.is_empty() {
            return Err(Error::Config("scenario command_tokens must be nonempty".into()));
        }
        Ok(())
    }
}

/// Independent rng streams derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    EncoderParams,
    PolicyInit,
    PretrainScenes,
    PreloadScenes,
    DeployScenes,
    DemoScenes,
    EvalTargetScenes,
    EvalSourceScenes,
    Adaptation,
}

/// Splitmix-style mixing of (master seed, stream tag) into a sub-seed.
pub fn derive_seed(master: u64, stream: SeedStream) -> u64 {
    let tag = stream as u64 + 1;
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(
            r#"{"thcl": {"margin_alpha": 0.5, "mystery": 1}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 42}"#).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.buffers.success_capacity, 50);
        assert_eq!(cfg.thcl.threshold_beta, 1.0);
        assert_eq!(cfg.train.accumulation_steps, 8);
    }

    #[test]
    fn defaults_trace_to_module_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.encoder.d_sem, 768);
        assert_eq!(cfg.encoder.d_spa, 256);
        assert_eq!(cfg.buffers.success_capacity, 50);
        assert_eq!(cfg.buffers.failure_capacity, 50);
        assert_eq!(cfg.decay.decay_lambda, 0.1);
        assert_eq!(cfg.thcl.margin_alpha, 0.5);
        assert_eq!(cfg.thcl.temperature_tau, 0.1);
        assert_eq!(cfg.thcl.threshold_beta, 1.0);
        assert_eq!(cfg.thcl.contrastive_weight, 0.3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.accumulation_steps, 8);
        assert_eq!(cfg.train.clip_inf_norm, 1.0);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.success.eps_pos, 0.05);
        assert_eq!(cfg.success.eps_force, 2.0);
        assert_eq!(cfg.success.t_max, 100);
        assert_eq!(cfg.experiment.trigger_window, 10);
        assert_eq!(cfg.experiment.trigger_threshold, 0.8);
        assert_eq!(cfg.experiment.demos_per_cycle, 12);
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(7, SeedStream::DeployScenes);
        let b = derive_seed(7, SeedStream::DemoScenes);
        let c = derive_seed(8, SeedStream::DeployScenes);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, SeedStream::DeployScenes));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.thcl.temperature_tau = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.experiment.trigger_threshold = 1.5;
        assert!(cfg.validate().is_err());
    }
}
