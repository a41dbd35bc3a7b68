//! Run-level metric computation and the JSONL event stream.
//!
//! The sink is append-only with a single consumer writing the output stream.
//! Every record carries a schema version; wall-clock quantities are kept out
//! of the stream so identical (config, seed) runs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::adapt::CycleReport;
use crate::error::Result;
use crate::simenv::Domain;

/// Schema version stamped on every JSONL record.
pub const METRICS_SCHEMA: u32 = 1;

/// Which part of the run an episode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Source-domain experiences gathered before deployment.
    Preload,
    /// Target-domain deployment attempts by the policy.
    Deploy,
    /// Expert demonstrations collected for an adaptation cycle.
    Demo,
    /// Evaluation rollouts before any adaptation.
    EvalPre,
    /// Evaluation rollouts after the adaptation phase.
    EvalPost,
}

/// One episode-level record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode_index: u64,
    pub domain: Domain,
    pub phase: Phase,
    pub success: bool,
    pub steps: usize,
    /// Behavioral-cloning loss of the live policy against the expert actions,
    /// recorded for successful episodes (the cumulative-adaptation-loss term).
    pub bc_on_expert: Option<f64>,
}

/// In-memory accumulation of a run's metrics.
#[derive(Debug, Default, Clone)]
pub struct RunMetrics {
    pub episodes: Vec<EpisodeRecord>,
    pub cycles: Vec<CycleReport>,
}

impl RunMetrics {
    pub fn record_episode(&mut self, record: EpisodeRecord) {
        self.episodes.push(record);
    }

    pub fn record_cycle(&mut self, report: CycleReport) {
        self.cycles.push(report);
    }

    /// Cumulative imitation loss over successful deployment episodes;
    /// failures contribute zero through the success indicator.
    pub fn cumulative_adapt_loss(&self) -> f64 {
        cumulative_adapt_loss(&self.episodes)
    }

    /// Total contrastive path counts across cycles: [triplet, infonce, none].
    pub fn thcl_path_counts(&self) -> [u64; 3] {
        let mut counts = [0u64; 3];
        for c in &self.cycles {
            for (total, cycle) in counts.iter_mut().zip(c.thcl_path_counts) {
                *total += cycle;
            }
        }
        counts
    }

    /// Buffer memory footprint after each cycle.
    pub fn memory_trace(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.memory_bytes).collect()
    }

    pub fn final_forgetting(&self) -> f64 {
        self.cycles.last().map(|c| c.forgetting_metric).unwrap_or(0.0)
    }
}

/// Sum of `bc_on_expert` over successful episodes. Altering failure-episode
/// losses can never change this value.
pub fn cumulative_adapt_loss(episodes: &[EpisodeRecord]) -> f64 {
    episodes
        .iter()
        .filter(|e| e.success)
        .filter_map(|e| e.bc_on_expert)
        .sum()
}

/// Success fraction over the selected episodes. The flag is true when the
/// selection was empty (rate defined as 0).
pub fn success_rate(
    episodes: &[EpisodeRecord],
    domain: Option<Domain>,
    phase: Option<Phase>,
) -> (f64, bool) {
    let selected: Vec<&EpisodeRecord> = episodes
        .iter()
        .filter(|e| domain.is_none_or(|d| e.domain == d))
        .filter(|e| phase.is_none_or(|p| e.phase == p))
        .collect();
    if selected.is_empty() {
        return (0.0, true);
    }
    let hits = selected.iter().filter(|e| e.success).count();
    (hits as f64 / selected.len() as f64, false)
}

/// Moving-average success curve with the given window (learning-curve output).
pub fn moving_average_success(
    episodes: &[EpisodeRecord],
    domain: Option<Domain>,
    phase: Option<Phase>,
    window: usize,
) -> Vec<f64> {
    let window = window.max(1);
    let flags: Vec<f64> = episodes
        .iter()
        .filter(|e| domain.is_none_or(|d| e.domain == d))
        .filter(|e| phase.is_none_or(|p| e.phase == p))
        .map(|e| if e.success { 1.0 } else { 0.0 })
        .collect();
    flags
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let start = (i + 1).saturating_sub(window);
            let slice = &flags[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Mean and standard error (sample std over sqrt(n)) across seeds.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    schema: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    record: &'a EpisodeRecord,
}

#[derive(Serialize)]
struct CycleLine<'a> {
    schema: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    report: &'a CycleReport,
}

/// Streams metric records to a JSONL file, one object per line.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write_episode(&mut self, record: &EpisodeRecord) -> Result<()> {
        serde_json::to_writer(
            &mut self.out,
            &EpisodeLine {
                schema: METRICS_SCHEMA,
                kind: "episode",
                record,
            },
        )?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_cycle(&mut self, report: &CycleReport) -> Result<()> {
        serde_json::to_writer(
            &mut self.out,
            &CycleLine {
                schema: METRICS_SCHEMA,
                kind: "cycle",
                report,
            },
        )?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(domain: Domain, phase: Phase, success: bool, bc: Option<f64>) -> EpisodeRecord {
        EpisodeRecord {
            episode_index: 0,
            domain,
            phase,
            success,
            steps: 10,
            bc_on_expert: bc,
        }
    }

    #[test]
    fn adapt_loss_ignores_failures() {
        let mut episodes = vec![
            episode(Domain::Target, Phase::Deploy, true, Some(1.5)),
            episode(Domain::Target, Phase::Deploy, false, Some(99.0)),
            episode(Domain::Target, Phase::Deploy, true, Some(0.25)),
        ];
        assert!((cumulative_adapt_loss(&episodes) - 1.75).abs() < 1e-12);
        // Perturbing the failure's loss changes nothing.
        episodes[1].bc_on_expert = Some(1e9);
        assert!((cumulative_adapt_loss(&episodes) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn adapt_loss_zero_without_successes() {
        let episodes = vec![episode(Domain::Target, Phase::Deploy, false, None)];
        assert_eq!(cumulative_adapt_loss(&episodes), 0.0);
        assert_eq!(cumulative_adapt_loss(&[]), 0.0);
    }

    #[test]
    fn success_rate_twenty_nine_of_thirty() {
        let episodes: Vec<EpisodeRecord> = (0..30)
            .map(|i| episode(Domain::Target, Phase::Deploy, i != 13, None))
            .collect();
        let (rate, empty) = success_rate(&episodes, Some(Domain::Target), None);
        assert!(!empty);
        assert!((rate - 29.0 / 30.0).abs() < 1e-4);
        assert!((rate - 0.9667).abs() < 1e-4);
    }

    #[test]
    fn success_rate_handles_empty_and_zero() {
        let (rate, empty) = success_rate(&[], None, None);
        assert_eq!((rate, empty), (0.0, true));
        let episodes: Vec<EpisodeRecord> = (0..5)
            .map(|_| episode(Domain::Source, Phase::EvalPre, false, None))
            .collect();
        let (rate, empty) = success_rate(&episodes, Some(Domain::Source), None);
        assert_eq!((rate, empty), (0.0, false));
        let (_, empty) = success_rate(&episodes, Some(Domain::Target), None);
        assert!(empty, "no Target episodes selected");
    }

    #[test]
    fn moving_average_of_constant_is_constant() {
        let episodes: Vec<EpisodeRecord> = (0..25)
            .map(|_| episode(Domain::Target, Phase::Deploy, true, None))
            .collect();
        let curve = moving_average_success(&episodes, None, None, 10);
        assert_eq!(curve.len(), 25);
        assert!(curve.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn moving_average_window_behavior() {
        let mut episodes = Vec::new();
        for i in 0..10 {
            episodes.push(episode(Domain::Target, Phase::Deploy, i >= 5, None));
        }
        let curve = moving_average_success(&episodes, None, None, 5);
        assert!((curve[4] - 0.0).abs() < 1e-12, "first five all fail");
        assert!((curve[9] - 1.0).abs() < 1e-12, "last five all succeed");
    }

    #[test]
    fn standard_error_matches_hand_computation() {
        let (mean, se) = mean_and_standard_error(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((mean - 3.0).abs() < 1e-12);
        // Sample std = sqrt(2.5), se = sqrt(2.5 / 5).
        assert!((se - (2.5f64 / 5.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_and_standard_error(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn writer_emits_schema_tagged_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut writer = MetricsWriter::create(&path).unwrap();
        writer
            .write_episode(&episode(Domain::Target, Phase::Deploy, true, Some(0.5)))
            .unwrap();
        writer.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["type"], "episode");
        assert_eq!(v["success"], true);
    }
}
