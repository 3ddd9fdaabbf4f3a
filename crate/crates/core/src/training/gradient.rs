//! Loss and gradient of a recorded episode under fixed parameters.

use std::collections::HashMap;

use super::{bce, loss_total, Trajectory, PROB_CLAMP};
use crate::curriculum::{InteractionRecord, QuestionId};
use crate::encoder::{Level, SetTrace};
use crate::error::{Error, Result};
use crate::nn::{add_into, axpy, sigmoid, softmax};
use crate::policy::HierModel;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub high: f64,
    pub low: f64,
    pub aux: f64,
    /// Summed policy entropy over all decisions.
    pub entropy: f64,
    pub total: f64,
}

struct CandidateSet {
    trace: SetTrace,
    projected: Vec<f64>,
    grad: Vec<f64>,
}

/// Replays `trajectory` with parameters `p`, weighting step `t`'s log-probabilities by `weights[t]`.
///
/// The total is `L_h + L_l + alpha * L_p - entropy_weight * H`, with `H` the summed entropy of
/// every decision distribution. Returns the losses and, when `grads` is given, accumulates
/// `dL/dp` into it.
pub fn episode_gradient(
    model: &HierModel,
    p: &[f64],
    trajectory: &Trajectory,
    weights: &[f64],
    alpha: f64,
    entropy_weight: f64,
    mut grads: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let steps = &trajectory.steps;
    if weights.len() != steps.len() {
        return Err(Error::DimensionMismatch {
            what: "step weights",
            expected: steps.len(),
            actual: weights.len(),
        });
    }
    if steps.is_empty() {
        return Ok(LossBreakdown::default());
    }
    let enc = &model.encoder;
    let fusion = &enc.fusion;
    let d_m = fusion.d_m;
    let hierarchical = !model.spec.policy.disable_high;

    // the last answer never informs a decision
    let mut records = trajectory.history.records.clone();
    let j0 = records.len();
    records.extend(steps[..steps.len() - 1].iter().map(|s| InteractionRecord::new(s.question, s.correct)));
    let history = enc.history.trace(p, &records)?;

    let target_ids: Vec<usize> = trajectory.targets.questions().iter().map(|q| q.0).collect();
    let target = enc.question_set.encode(p, &target_ids)?;
    let target_term = fusion.target.forward(p, &target.pooled);
    let all_concepts: Vec<usize> = (0..model.n_concepts()).collect();
    let concepts = if hierarchical {
        let trace = enc.concept_set.encode(p, &all_concepts)?;
        let term = fusion.concepts.forward(p, &trace.pooled);
        Some((trace, term))
    } else {
        None
    };

    let mut sets: Vec<CandidateSet> = Vec::new();
    let mut set_index: HashMap<&[QuestionId], usize> = HashMap::new();
    let mut step_set = Vec::with_capacity(steps.len());
    for s in steps {
        if s.candidates.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        let idx = match set_index.get(s.candidates.as_slice()) {
            Some(&i) => i,
            None => {
                let ids: Vec<usize> = s.candidates.iter().map(|q| q.0).collect();
                let trace = enc.question_set.encode(p, &ids)?;
                let projected = fusion.candidates.forward(p, &trace.pooled);
                sets.push(CandidateSet {
                    trace,
                    projected,
                    grad: vec![0.0; d_m],
                });
                set_index.insert(s.candidates.as_slice(), sets.len() - 1);
                sets.len() - 1
            }
        };
        step_set.push(idx);
    }

    let mut loss = LossBreakdown::default();
    let mut d_states = vec![vec![0.0; enc.history.hidden_dim()]; history.len() + 1];
    let mut d_target = vec![0.0; d_m];
    let mut d_concepts = vec![0.0; d_m];

    for (t, s) in steps.iter().enumerate() {
        let w = weights[t];
        let h = history.state(j0 + t);
        let history_term = fusion.history.forward(p, h);
        let mut d_history_term = vec![0.0; d_m];

        if let Some((_, concept_term)) = &concepts {
            let s_h = fusion.combine(p, Level::High, &history_term, &target_term, concept_term);
            let trace = model.high.forward(p, &s_h.vector, &all_concepts)?;
            let probs = softmax(&trace.logits);
            let mut log_prob = 0.0;
            for c in &s.concepts {
                log_prob += probs.get(c.0).ok_or(Error::ElementNotInSet(c.0))?.ln();
            }
            loss.high -= w * log_prob;
            loss.entropy += entropy(&probs);
            if let Some(g) = grads.as_deref_mut() {
                let k = s.concepts.len() as f64;
                let mut dlogits: Vec<f64> = probs.iter().map(|pi| w * k * pi).collect();
                for c in &s.concepts {
                    dlogits[c.0] -= w;
                }
                add_entropy_grad(&probs, entropy_weight, &mut dlogits);
                let ds = model.high.backward(p, &trace, &dlogits, g);
                add_into(&mut d_history_term, &ds);
                add_into(&mut d_target, &ds);
                add_into(&mut d_concepts, &ds);
                let off = fusion.prompt_offset(Level::High);
                add_into(&mut g[off..off + d_m], &ds);
            }
        }

        let set = &sets[step_set[t]];
        let s_l = fusion.combine(p, Level::Low, &history_term, &target_term, &set.projected);
        let actions: Vec<usize> = s.candidates.iter().map(|q| q.0).collect();
        let trace = model.low.forward(p, &s_l.vector, &actions)?;
        let probs = softmax(&trace.logits);
        let pos = actions
            .iter()
            .position(|&a| a == s.question.0)
            .ok_or(Error::ElementNotInSet(s.question.0))?;
        loss.low -= w * probs[pos].ln();
        loss.entropy += entropy(&probs);

        let (aux_hidden, z) = model.aux.forward(p, h, s.question);
        let y_hat = sigmoid(z);
        loss.aux += bce(s.correct, y_hat);

        if let Some(g) = grads.as_deref_mut() {
            let mut dlogits: Vec<f64> = probs.iter().map(|pi| w * pi).collect();
            dlogits[pos] -= w;
            add_entropy_grad(&probs, entropy_weight, &mut dlogits);
            let ds = model.low.backward(p, &trace, &dlogits, g);
            add_into(&mut d_history_term, &ds);
            add_into(&mut d_target, &ds);
            add_into(&mut sets[step_set[t]].grad, &ds);
            let off = fusion.prompt_offset(Level::Low);
            add_into(&mut g[off..off + d_m], &ds);

            let dh = fusion.history.backward(p, h, &d_history_term, g);
            add_into(&mut d_states[j0 + t], &dh);
            let unclamped = y_hat > PROB_CLAMP && y_hat < 1.0 - PROB_CLAMP;
            if alpha != 0.0 && unclamped {
                let y = if s.correct { 1.0 } else { 0.0 };
                let dh_aux = model.aux.backward(p, h, &aux_hidden, s.question, alpha * (y_hat - y), g);
                axpy(1.0, &dh_aux, &mut d_states[j0 + t]);
            }
        }
    }

    if let Some(g) = grads {
        let dg = fusion.target.backward(p, &target.pooled, &d_target, g);
        enc.question_set.backward(&target, &dg, g);
        if let Some((trace, _)) = &concepts {
            let de = fusion.concepts.backward(p, &trace.pooled, &d_concepts, g);
            enc.concept_set.backward(trace, &de, g);
        }
        for set in &sets {
            let de = fusion.candidates.backward(p, &set.trace.pooled, &set.grad, g);
            enc.question_set.backward(&set.trace, &de, g);
        }
        enc.history.backward(p, &history, &d_states, g);
    }
    loss.total = loss_total(loss.high, loss.low, loss.aux, alpha) - entropy_weight * loss.entropy;
    Ok(loss)
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Adds the logit gradient of `-beta * H(softmax(z))`, which is `beta * p_i * (ln p_i + H)`.
fn add_entropy_grad(probs: &[f64], beta: f64, dlogits: &mut [f64]) {
    if beta == 0.0 {
        return;
    }
    let h = entropy(probs);
    for (d, &p) in dlogits.iter_mut().zip(probs) {
        if p > 0.0 {
            *d += beta * p * (p.ln() + h);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub n_params: usize,
    pub n_passed: usize,
    pub max_rel_error: f64,
    /// Parameter name, analytic and numeric derivative of the worst entry.
    pub worst: Option<(String, f64, f64)>,
}

impl GradientCheck {
    pub fn pass_fraction(&self) -> f64 {
        self.n_passed as f64 / self.n_params.max(1) as f64
    }
}

/// Compares the analytic gradient of the total loss with central differences.
///
/// An entry passes when its relative error is at most `tolerance`, or when
/// both derivatives are below `1e-9` in magnitude (parameters the episode
/// does not touch).
pub fn check_gradient(
    model: &HierModel,
    trajectory: &Trajectory,
    weights: &[f64],
    alpha: f64,
    entropy_weight: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradientCheck> {
    let mut p = model.params.values().to_vec();
    let mut analytic = vec![0.0; p.len()];
    episode_gradient(model, &p, trajectory, weights, alpha, entropy_weight, Some(&mut analytic))?;
    let mut report = GradientCheck {
        n_params: p.len(),
        n_passed: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let names: Vec<(std::ops::Range<usize>, &str)> = model
        .params
        .entries()
        .iter()
        .map(|e| (e.range(), e.name.as_str()))
        .collect();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = episode_gradient(model, &p, trajectory, weights, alpha, entropy_weight, None)?.total;
        p[i] = orig - step;
        let down = episode_gradient(model, &p, trajectory, weights, alpha, entropy_weight, None)?.total;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let rel = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
        if rel <= tolerance {
            report.n_passed += 1;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            let name = names.iter().find(|(r, _)| r.contains(&i)).map_or("?", |(_, n)| n);
            report.worst = Some((format!("{name}[{i}]"), a, numeric));
        }
    }
    Ok(report)
}
