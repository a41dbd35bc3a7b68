//! Behavioral cloning, the two contrastive objectives, the thresholded
//! switch between them, and analytic gradients over the adapter factors.
//!
//! The contrastive term evaluates the triplet value first and selects the
//! triplet path when it is at or below the threshold, otherwise InfoNCE over
//! all available negatives. The switch indicator is not differentiated: the
//! gradient is that of the selected branch, treated as piecewise-fixed at the
//! evaluated point.
//!
//! Everything here is a pure function of its inputs and safe for parallel
//! evaluation across batches.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encoder::command_feature;
use crate::error::{Error, Result};
use crate::policy::{AdapterGrads, PolicyState, Representation};
use crate::retrieval::{ScoredExperience, TrainBatch};

/// Contrastive-loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThclConfig {
    /// Triplet margin.
    pub margin_alpha: f64,
    /// InfoNCE temperature.
    pub temperature_tau: f64,
    /// Switch threshold: triplet value at or below this keeps the triplet path.
    pub threshold_beta: f64,
    /// Weight of the contrastive term in the total loss.
    pub contrastive_weight: f64,
}

impl Default for ThclConfig {
    fn default() -> Self {
        Self {
            margin_alpha: 0.5,
            temperature_tau: 0.1,
            threshold_beta: 1.0,
            contrastive_weight: 0.3,
        }
    }
}

impl ThclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_tau > 0.0) || !self.temperature_tau.is_finite() {
            return Err(Error::Config(format!(
                "temperature_tau must be > 0, got {}",
                self.temperature_tau
            )));
        }
        if self.contrastive_weight < 0.0 || !self.contrastive_weight.is_finite() {
            return Err(Error::Config(format!(
                "contrastive_weight must be >= 0, got {}",
                self.contrastive_weight
            )));
        }
        if !self.margin_alpha.is_finite() || !self.threshold_beta.is_finite() {
            return Err(Error::Config("margin/threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Which contrastive branch a batch used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContrastivePath {
    TripletPath,
    InfoNCEPath,
    NoContrastive,
}

/// Per-batch loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    /// Behavioral-cloning term.
    pub bc: f64,
    /// Evaluated triplet value (0 when no negatives were available).
    pub triplet: f64,
    /// InfoNCE value, present only when that branch was selected.
    pub infonce: Option<f64>,
    /// Selected contrastive branch.
    pub selected: ContrastivePath,
    /// `bc + contrastive_weight * selected term`.
    pub total: f64,
}

/// Behavioral-cloning loss between per-step action sequences:
/// `0.5 * sum_t ||a_pred_t - a*_t||^2` (Gaussian negative log-likelihood with
/// unit variance, constants dropped). Zero iff the sequences match exactly.
pub fn bc_loss(predicted: &Array2<f64>, expert: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != expert.dim() {
        return Err(Error::LengthMismatch {
            context: "bc_loss action sequences",
            left: predicted.ncols(),
            right: expert.ncols(),
        });
    }
    let mut total = 0.0;
    for (p, e) in predicted.iter().zip(expert.iter()) {
        let d = p - e;
        total += d * d;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { term: "bc_loss" });
    }
    Ok(0.5 * total)
}

/// BC loss of a single predicted action against every step of an expert
/// sequence, plus its gradient with respect to the prediction.
///
/// The desk-scale policy predicts one action per decision chunk, so the
/// prediction is compared against each expert step:
/// `0.5 * sum_t ||a - a*_t||^2`, `dL/da = T*a - sum_t a*_t`.
pub fn bc_repeated(pred: &Array1<f64>, expert: &Array2<f64>) -> Result<(f64, Array1<f64>)> {
    if pred.len() != expert.nrows() {
        return Err(Error::LengthMismatch {
            context: "bc_repeated action dims",
            left: pred.len(),
            right: expert.nrows(),
        });
    }
    let steps = expert.ncols();
    let mut loss = 0.0;
    let mut grad = Array1::zeros(pred.len());
    for t in 0..steps {
        for (i, g) in grad.iter_mut().enumerate() {
            let d = pred[i] - expert[(i, t)];
            loss += d * d;
            *g += d;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { term: "bc_loss" });
    }
    Ok((0.5 * loss, grad))
}

/// Margin hinge on representation distances:
/// `max(0, ||h - h+|| - ||h - h-|| + alpha)`.
///
/// L2 distance rather than cosine: the representation space is not
/// normalized, leaving the scale learnable.
pub fn triplet_loss(
    h: &Representation,
    h_pos: &Representation,
    h_neg: &Representation,
    alpha: f64,
) -> Result<f64> {
    if h.dim() != h_pos.dim() || h.dim() != h_neg.dim() {
        return Err(Error::DimensionMismatch {
            context: "triplet representations",
            expected: h.dim(),
            actual: h_pos.dim().max(h_neg.dim()),
        });
    }
    let value = (h.distance(h_pos) - h.distance(h_neg) + alpha).max(0.0);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: "triplet_loss",
        });
    }
    Ok(value)
}

/// Softmax contrastive loss over one positive and `K >= 1` negatives at
/// temperature `tau`, computed in log-sum-exp form so extreme logits stay
/// finite:
/// `-log( exp(h.h+/tau) / (exp(h.h+/tau) + sum_i exp(h.h-_i/tau)) )`.
pub fn infonce_loss(
    h: &Representation,
    h_pos: &Representation,
    negatives: &[Representation],
    tau: f64,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let pos_logit = h.dot(h_pos) / tau;
    let neg_logits: Vec<f64> = negatives.iter().map(|n| h.dot(n) / tau).collect();
    let max_logit = neg_logits
        .iter()
        .fold(pos_logit, |m, &l| m.max(l));
    if !max_logit.is_finite() {
        return Err(Error::NonFinite {
            term: "infonce logits",
        });
    }
    let value = if pos_logit >= max_logit {
        // ln(1 + sum_i exp(l_i - l+)); ln_1p keeps tiny losses above zero.
        let tail: f64 = neg_logits.iter().map(|l| (l - pos_logit).exp()).sum();
        tail.ln_1p()
    } else {
        let denom = (pos_logit - max_logit).exp()
            + neg_logits.iter().map(|l| (l - max_logit).exp()).sum::<f64>();
        -(pos_logit - max_logit) + denom.ln()
    };
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: "infonce_loss",
        });
    }
    Ok(value)
}

/// Outcome of the thresholded contrastive selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThclFragment {
    /// Triplet value evaluated against the first negative (0 if none).
    pub triplet: f64,
    /// InfoNCE value over all negatives, when that branch was selected.
    pub infonce: Option<f64>,
    pub selected: ContrastivePath,
    /// Value of the selected term (0 for `NoContrastive`).
    pub contrastive: f64,
}

/// Evaluates the contrastive term: triplet against the first negative, then
/// the switch. At or below `threshold_beta` the triplet path is kept
/// (inclusive boundary); above it, InfoNCE over all `K` negatives. No
/// negatives means no contrastive term.
pub fn thcl(
    h: &Representation,
    h_pos: &Representation,
    negatives: &[Representation],
    cfg: &ThclConfig,
) -> Result<ThclFragment> {
    if negatives.is_empty() {
        return Ok(ThclFragment {
            triplet: 0.0,
            infonce: None,
            selected: ContrastivePath::NoContrastive,
            contrastive: 0.0,
        });
    }
    let triplet = triplet_loss(h, h_pos, &negatives[0], cfg.margin_alpha)?;
    if triplet <= cfg.threshold_beta {
        Ok(ThclFragment {
            triplet,
            infonce: None,
            selected: ContrastivePath::TripletPath,
            contrastive: triplet,
        })
    } else {
        let infonce = infonce_loss(h, h_pos, negatives, cfg.temperature_tau)?;
        Ok(ThclFragment {
            triplet,
            infonce: Some(infonce),
            selected: ContrastivePath::InfoNCEPath,
            contrastive: infonce,
        })
    }
}

/// Combines the BC term with the weighted contrastive fragment.
pub fn total_loss(bc: f64, fragment: &ThclFragment, cfg: &ThclConfig) -> LossReport {
    let contrastive = match fragment.selected {
        ContrastivePath::NoContrastive => 0.0,
        _ => fragment.contrastive,
    };
    LossReport {
        bc,
        triplet: fragment.triplet,
        infonce: fragment.infonce,
        selected: fragment.selected,
        total: bc + cfg.contrastive_weight * contrastive,
    }
}

/// Index of the entry with the highest sampling probability (ties keep the
/// earlier, i.e. higher-ranked, entry).
fn highest_probability(set: &[ScoredExperience]) -> usize {
    let mut best = 0;
    for (i, s) in set.iter().enumerate().skip(1) {
        if s.sampling_prob > set[best].sampling_prob {
            best = i;
        }
    }
    best
}

/// Exact analytic gradients of the batch's total loss with respect to the
/// adapter factors, plus the loss report.
///
/// The BC term averages over the current item and the retrieved positives
/// (failures never contribute to BC). Representations for retrieved
/// experiences are recomputed by the current policy from their stored
/// embeddings and commands, keeping them on-policy. The anchor is the current
/// item's `h`; the positive is the retrieved success with the highest
/// sampling probability; the triplet negative is likewise the
/// highest-probability failure.
pub fn loss_gradients(
    batch: &TrainBatch,
    policy: &PolicyState,
    cfg: &ThclConfig,
) -> Result<(LossReport, AdapterGrads)> {
    cfg.validate()?;
    let d_c = policy.d_c();

    let current_feature = command_feature(&batch.current.command, d_c);
    let current_trace = policy.forward_trace(&batch.current.embedding, &current_feature)?;

    let positive_traces: Vec<_> = batch
        .positives
        .iter()
        .map(|s| {
            let feat = command_feature(s.experience.command(), d_c);
            policy.forward_trace(s.experience.embedding(), &feat)
        })
        .collect::<Result<_>>()?;

    // BC: mean over items with expert actions (current + positives), each
    // item summing over its expert steps.
    let n_bc = 1 + positive_traces.len();
    let mut bc_total = 0.0;
    let (cur_bc, cur_grad_raw) = bc_repeated(&current_trace.action, &batch.current.expert_actions)?;
    bc_total += cur_bc;
    let mut grad_action_current = cur_grad_raw;
    let mut grad_action_positives = Vec::with_capacity(positive_traces.len());
    for (trace, scored) in positive_traces.iter().zip(&batch.positives) {
        let (item_bc, item_grad) = bc_repeated(&trace.action, scored.experience.actions())?;
        bc_total += item_bc;
        grad_action_positives.push(item_grad);
    }
    let bc = bc_total / n_bc as f64;
    let inv_n = 1.0 / n_bc as f64;
    grad_action_current.mapv_inplace(|v| v * inv_n);
    for g in grad_action_positives.iter_mut() {
        g.mapv_inplace(|v| v * inv_n);
    }

    // Contrastive term: needs a weight, a positive and at least one negative.
    let contrastive_active =
        cfg.contrastive_weight > 0.0 && !batch.positives.is_empty() && !batch.negatives.is_empty();

    let mut grad_h_current: Option<Array1<f64>> = None;
    let mut grad_h_positive: Option<(usize, Array1<f64>)> = None;
    let mut negative_traces = Vec::new();
    let mut grad_h_negatives: Vec<Array1<f64>> = Vec::new();

    let fragment = if contrastive_active {
        // Negatives ordered so the triplet branch sees the most probable one.
        let mut order: Vec<usize> = (0..batch.negatives.len()).collect();
        let first = highest_probability(&batch.negatives);
        order.swap(0, first);
        for &i in &order {
            let s = &batch.negatives[i];
            let feat = command_feature(s.experience.command(), d_c);
            negative_traces.push(policy.forward_trace(s.experience.embedding(), &feat)?);
        }
        let pos_idx = highest_probability(&batch.positives);
        let h = current_trace.representation();
        let h_pos = positive_traces[pos_idx].representation();
        let neg_reps: Vec<Representation> =
            negative_traces.iter().map(|t| t.representation()).collect();
        let fragment = thcl(&h, &h_pos, &neg_reps, cfg)?;

        let w = cfg.contrastive_weight;
        match fragment.selected {
            ContrastivePath::TripletPath => {
                if fragment.triplet > 0.0 {
                    // d/dh ||h - x|| = (h - x) / ||h - x||; zero-distance
                    // terms take the zero subgradient.
                    let hv = h.values();
                    let pv = h_pos.values();
                    let nv = neg_reps[0].values();
                    let d_pos = h.distance(&h_pos);
                    let d_neg = h.distance(&neg_reps[0]);
                    let mut gh = Array1::zeros(hv.len());
                    let mut gp = Array1::zeros(hv.len());
                    let mut gn = Array1::zeros(hv.len());
                    if d_pos > 1e-12 {
                        for i in 0..hv.len() {
                            let u = (hv[i] - pv[i]) / d_pos;
                            gh[i] += u;
                            gp[i] -= u;
                        }
                    }
                    if d_neg > 1e-12 {
                        for i in 0..hv.len() {
                            let u = (hv[i] - nv[i]) / d_neg;
                            gh[i] -= u;
                            gn[i] += u;
                        }
                    }
                    grad_h_current = Some(gh * w);
                    grad_h_positive = Some((pos_idx, gp * w));
                    grad_h_negatives = vec![gn * w];
                    for _ in 1..negative_traces.len() {
                        grad_h_negatives.push(Array1::zeros(hv.len()));
                    }
                }
                // Flat hinge region: zero contrastive gradient.
            }
            ContrastivePath::InfoNCEPath => {
                let tau = cfg.temperature_tau;
                let pos_logit = h.dot(&h_pos) / tau;
                let neg_logits: Vec<f64> =
                    neg_reps.iter().map(|n| h.dot(n) / tau).collect();
                let max_logit = neg_logits.iter().fold(pos_logit, |m, &l| m.max(l));
                let exp_pos = (pos_logit - max_logit).exp();
                let exp_negs: Vec<f64> =
                    neg_logits.iter().map(|l| (l - max_logit).exp()).collect();
                let denom = exp_pos + exp_negs.iter().sum::<f64>();
                let p_pos = exp_pos / denom;
                let hv = h.values();
                let mut gh = Array1::zeros(hv.len());
                // dL/dh = [(p+ - 1) h+ + sum_i p_i h-_i] / tau
                for i in 0..hv.len() {
                    gh[i] += (p_pos - 1.0) * h_pos.values()[i] / tau;
                }
                let mut gns = Vec::with_capacity(neg_reps.len());
                for (n_idx, rep) in neg_reps.iter().enumerate() {
                    let p_i = exp_negs[n_idx] / denom;
                    for i in 0..hv.len() {
                        gh[i] += p_i * rep.values()[i] / tau;
                    }
                    let mut gn = Array1::zeros(hv.len());
                    for i in 0..hv.len() {
                        gn[i] = p_i * hv[i] / tau;
                    }
                    gns.push(gn * w);
                }
                let mut gp = Array1::zeros(hv.len());
                for i in 0..hv.len() {
                    gp[i] = (p_pos - 1.0) * hv[i] / tau;
                }
                grad_h_current = Some(gh * w);
                grad_h_positive = Some((pos_idx, gp * w));
                grad_h_negatives = gns;
            }
            ContrastivePath::NoContrastive => {}
        }
        fragment
    } else {
        ThclFragment {
            triplet: 0.0,
            infonce: None,
            selected: ContrastivePath::NoContrastive,
            contrastive: 0.0,
        }
    };

    let report = total_loss(bc, &fragment, cfg);
    if !report.total.is_finite() {
        return Err(Error::NonFinite { term: "total_loss" });
    }

    // Backprop all items that received upstream gradients.
    let mut grads = AdapterGrads::zeros_like(policy);
    let full = policy.backward(
        &current_trace,
        &grad_action_current,
        grad_h_current.as_ref(),
    );
    grads.add_assign(&policy.adapter_grads(&full));
    for (i, trace) in positive_traces.iter().enumerate() {
        let gh = match &grad_h_positive {
            Some((idx, g)) if *idx == i => Some(g),
            _ => None,
        };
        let full = policy.backward(trace, &grad_action_positives[i], gh);
        grads.add_assign(&policy.adapter_grads(&full));
    }
    let zero_action = Array1::zeros(grad_action_current.len());
    for (trace, gh) in negative_traces.iter().zip(&grad_h_negatives) {
        let full = policy.backward(trace, &zero_action, Some(gh));
        grads.add_assign(&policy.adapter_grads(&full));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            term: "adapter gradients",
        });
    }
    Ok((report, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn rep(values: &[f64]) -> Representation {
        Representation::new(arr1(values))
    }

    #[test]
    fn bc_loss_zero_on_exact_match() {
        let a = Array2::from_shape_fn((7, 3), |(i, j)| i as f64 + j as f64);
        assert_eq!(bc_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn bc_loss_single_unit_deviation() {
        let expert = Array2::zeros((7, 1));
        let mut pred = Array2::zeros((7, 1));
        pred[(0, 0)] = 1.0;
        assert!((bc_loss(&pred, &expert).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bc_loss_rejects_length_mismatch() {
        let a = Array2::zeros((7, 3));
        let b = Array2::zeros((7, 4));
        assert!(matches!(
            bc_loss(&a, &b),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn bc_repeated_matches_bc_loss_of_tiled_prediction() {
        let pred = arr1(&[0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2]);
        let expert = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - j as f64) * 0.1);
        let tiled = Array2::from_shape_fn((7, 4), |(i, _)| pred[i]);
        let (loss, _) = bc_repeated(&pred, &expert).unwrap();
        assert!((loss - bc_loss(&tiled, &expert).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn triplet_closed_forms() {
        let h = rep(&[0.0, 0.0]);
        let far = rep(&[0.0, 2.0]);
        let near = rep(&[0.2, 0.0]);
        // Satisfied margin: max(0, 0 - 2 + 0.5) = 0.
        assert_eq!(triplet_loss(&h, &h, &far, 0.5).unwrap(), 0.0);
        // Violated margin: max(0, 0 - 0.2 + 0.5) = 0.3.
        assert!((triplet_loss(&h, &h, &near, 0.5).unwrap() - 0.3).abs() < 1e-15);
        // h+ = h-: distances cancel, loss = alpha.
        let p = rep(&[0.7, -0.3]);
        assert!((triplet_loss(&h, &p, &p, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn infonce_equal_logits_give_ln_k_plus_one() {
        for k in 1..=16 {
            let h = rep(&[1.0, 0.0]);
            let pos = rep(&[0.3, 0.4]);
            let negs: Vec<Representation> = (0..k).map(|_| rep(&[0.3, -0.9])).collect();
            // h.pos = 0.3 = h.neg for every negative.
            let loss = infonce_loss(&h, &pos, &negs, 0.1).unwrap();
            let expected = ((k + 1) as f64).ln();
            assert!(
                (loss - expected).abs() < 1e-12,
                "K={k}: {loss} vs {expected}"
            );
        }
    }

    #[test]
    fn infonce_vanishes_with_dominant_positive() {
        // Positive logit 50*tau above the negative.
        let tau = 0.1;
        let h = rep(&[1.0, 0.0]);
        let pos = rep(&[5.0, 0.0]);
        let neg = rep(&[0.0, 1.0]);
        let loss = infonce_loss(&h, &pos, &[neg], tau).unwrap();
        assert!(loss > 0.0);
        assert!(loss < 1e-20, "loss = {loss}");
    }

    #[test]
    fn infonce_closed_form_single_negative() {
        // h.h+ = 1, h.h- = 0, tau = 0.1 -> -log(e^10 / (e^10 + 1)) = ln(1 + e^-10).
        let h = rep(&[1.0, 0.0]);
        let pos = rep(&[1.0, 0.0]);
        let neg = rep(&[0.0, 1.0]);
        let loss = infonce_loss(&h, &pos, &[neg], 0.1).unwrap();
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 4.54e-5).abs() < 1e-6);
    }

    #[test]
    fn infonce_is_stable_at_extreme_logits() {
        let tau = 0.1;
        for scale in [1e4, -1e4] {
            let h = rep(&[1.0, 0.0]);
            let pos = rep(&[scale, 0.0]);
            let negs = vec![rep(&[-scale, 0.0]), rep(&[scale * 0.5, 0.0])];
            let loss = infonce_loss(&h, &pos, &negs, tau).unwrap();
            assert!(loss.is_finite());
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn infonce_rejects_empty_negatives() {
        let h = rep(&[1.0, 0.0]);
        assert!(matches!(
            infonce_loss(&h, &h, &[], 0.1),
            Err(Error::EmptyNegatives)
        ));
    }

    #[test]
    fn thcl_switches_on_threshold() {
        let cfg = ThclConfig::default();
        let h = rep(&[0.0, 0.0]);

        // Triplet value 0.4 <= 1.0: triplet path.
        let near = rep(&[0.1, 0.0]);
        let frag = thcl(&h, &h, &[near], &cfg).unwrap();
        assert_eq!(frag.selected, ContrastivePath::TripletPath);
        assert!((frag.contrastive - 0.4).abs() < 1e-12);

        // Triplet value 1.3 > 1.0: InfoNCE path.
        let pos = rep(&[1.0, 0.0]);
        let neg = rep(&[0.2, 0.0]);
        let frag = thcl(&h, &pos, &[neg], &cfg).unwrap();
        assert!((frag.triplet - 1.3).abs() < 1e-12);
        assert_eq!(frag.selected, ContrastivePath::InfoNCEPath);
        assert!(frag.infonce.is_some());
    }

    #[test]
    fn thcl_boundary_is_inclusive_to_triplet() {
        let cfg = ThclConfig::default();
        let h = rep(&[0.0, 0.0]);
        // d+ = 1.0, d- = 0.5, alpha = 0.5 -> triplet = exactly 1.0 = beta.
        let pos = rep(&[1.0, 0.0]);
        let neg = rep(&[0.5, 0.0]);
        let frag = thcl(&h, &pos, &[neg], &cfg).unwrap();
        assert_eq!(frag.triplet, 1.0);
        assert_eq!(frag.selected, ContrastivePath::TripletPath);
    }

    #[test]
    fn thcl_no_negatives_is_no_contrastive() {
        let cfg = ThclConfig::default();
        let h = rep(&[0.0, 0.0]);
        let frag = thcl(&h, &h, &[], &cfg).unwrap();
        assert_eq!(frag.selected, ContrastivePath::NoContrastive);
        assert_eq!(frag.contrastive, 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let cfg = ThclConfig::default();
        let frag = ThclFragment {
            triplet: 0.4,
            infonce: None,
            selected: ContrastivePath::TripletPath,
            contrastive: 0.4,
        };
        let report = total_loss(2.0, &frag, &cfg);
        assert!((report.total - 2.12).abs() < 1e-12);

        let none = ThclFragment {
            triplet: 0.0,
            infonce: None,
            selected: ContrastivePath::NoContrastive,
            contrastive: 0.0,
        };
        assert_eq!(total_loss(2.0, &none, &cfg).total, 2.0);

        let zero_weight = ThclConfig {
            contrastive_weight: 0.0,
            ..Default::default()
        };
        assert_eq!(total_loss(2.0, &frag, &zero_weight).total, 2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn doubling_deviation_quadruples_bc(
                base in proptest::collection::vec(-2.0f64..2.0, 7),
                dev in proptest::collection::vec(-1.0f64..1.0, 7),
            ) {
                let expert = Array2::from_shape_fn((7, 1), |(i, _)| base[i]);
                let once = Array2::from_shape_fn((7, 1), |(i, _)| base[i] + dev[i]);
                let twice = Array2::from_shape_fn((7, 1), |(i, _)| base[i] + 2.0 * dev[i]);
                let l1 = bc_loss(&once, &expert).unwrap();
                let l2 = bc_loss(&twice, &expert).unwrap();
                prop_assert!((l2 - 4.0 * l1).abs() <= 1e-9 * l1.abs().max(1.0));
            }

            #[test]
            fn triplet_hinge_zero_when_margin_satisfied(
                hv in proptest::collection::vec(-1.0f64..1.0, 4),
                pv in proptest::collection::vec(-1.0f64..1.0, 4),
                alpha in 0.0f64..1.0,
                push in 0.0f64..3.0,
            ) {
                let h = rep(&hv);
                let p = rep(&pv);
                let d_pos = h.distance(&p);
                // Construct a negative at distance >= d_pos + alpha + push.
                let mut nv = hv.clone();
                nv[0] += d_pos + alpha + push + 1e-9;
                let n = rep(&nv);
                prop_assume!(h.distance(&n) + 1e-12 >= d_pos + alpha);
                let loss = triplet_loss(&h, &p, &n, alpha).unwrap();
                prop_assert!(loss.abs() < 1e-9);
            }

            #[test]
            fn losses_are_nonnegative(
                hv in proptest::collection::vec(-2.0f64..2.0, 4),
                pv in proptest::collection::vec(-2.0f64..2.0, 4),
                nv in proptest::collection::vec(-2.0f64..2.0, 4),
            ) {
                let h = rep(&hv);
                let p = rep(&pv);
                let n = rep(&nv);
                prop_assert!(triplet_loss(&h, &p, &n, 0.5).unwrap() >= 0.0);
                prop_assert!(infonce_loss(&h, &p, &[n], 0.1).unwrap() > 0.0);
            }
        }
    }
}
