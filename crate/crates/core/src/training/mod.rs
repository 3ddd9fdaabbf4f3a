//! Episode rollout, returns, the three losses and the optimization loop.

mod checkpoint;
mod gradient;
mod run;

use serde::{Deserialize, Serialize};

pub use checkpoint::{config_hash, Checkpoint, RngState, CHECKPOINT_SCHEMA};
pub use gradient::{check_gradient, episode_gradient, GradientCheck, LossBreakdown};
pub use run::{moving_average, Baseline, train_run, EpisodeMetrics, TrainOutputs, TrainReport, METRICS_HEADER};

use crate::curriculum::{ConceptId, LearningHistory, LearningTarget, QuestionId};
use crate::encoder::LearningState;
use crate::error::{Error, Result};
use crate::evaluation::learning_effect;
use crate::policy::{DecisionMode, Recommender};
use crate::rng::Rng;
use crate::simulators::EpisodeStart;

/// Learning rates accepted by [`TrainConfig::validate`].
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-3, 5e-4, 1e-4];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r_t = (E_t - E_{t-1}) / (E_max - E_b)`, summing to the learning effect.
    #[default]
    Telescoping,
    /// Zero until the last step, which receives the learning effect.
    TerminalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub batch_size: usize,
    /// Derived from the experiment seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub reward_mode: RewardMode,
    /// Subtract a per-step mean of returns.
    pub baseline: bool,
    /// Weight of earlier batches in the baseline mean; 0 uses the current batch only.
    pub baseline_decay: f64,
    /// Weight of the policy entropy bonus subtracted from the loss; 0 disables it.
    pub entropy_weight: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Checkpoint period in episodes; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Steps per episode; defaults to the simulator's step limit.
    pub steps: Option<usize>,
    /// Initial history length; defaults to the simulator's.
    pub warmup_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 1.0,
            learning_rate: 1e-3,
            episodes: 30_000,
            batch_size: 16,
            seed: 0,
            reward_mode: RewardMode::Telescoping,
            baseline: false,
            baseline_decay: 0.0,
            entropy_weight: 0.0,
            clip_norm: 5.0,
            checkpoint_every: 0,
            steps: None,
            warmup_len: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("training.gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("training.alpha must be non-negative, got {}", self.alpha)));
        }
        if !LEARNING_RATE_GRID.contains(&self.learning_rate) {
            return Err(Error::Config(format!(
                "training.learning_rate must be one of {LEARNING_RATE_GRID:?}, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config(format!(
                "training.baseline_decay must lie in [0, 1), got {}",
                self.baseline_decay
            )));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(Error::Config(format!(
                "training.entropy_weight must be non-negative, got {}",
                self.entropy_weight
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be at least 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("training.clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub state_high: Option<LearningState>,
    pub state_low: Option<LearningState>,
    pub concepts: Vec<ConceptId>,
    pub concept_log_prob: Option<f64>,
    pub candidates: Vec<QuestionId>,
    pub question: QuestionId,
    pub question_log_prob: Option<f64>,
    pub reward: f64,
    pub correct: bool,
    pub predicted: Option<f64>,
    /// Target mastery after this step.
    pub mastery: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub history: LearningHistory,
    pub targets: LearningTarget,
    pub steps: Vec<StepRecord>,
    pub initial_mastery: usize,
    pub max_mastery: usize,
    pub final_mastery: usize,
    pub delta_u: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Learning effect after the first `t` steps.
    pub fn delta_at(&self, t: usize) -> Result<f64> {
        let e = if t == 0 { self.initial_mastery } else { self.steps[t - 1].mastery };
        learning_effect(e as f64, self.initial_mastery as f64, self.max_mastery as f64)
    }
}

/// Runs `steps` recommendations against the student in `start`.
pub fn rollout(
    start: EpisodeStart,
    recommender: &dyn Recommender,
    steps: usize,
    mode: DecisionMode,
    reward_mode: RewardMode,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let EpisodeStart {
        mut session,
        history,
        targets,
        initial_mastery,
    } = start;
    let max_mastery = targets.len();
    let span = max_mastery.checked_sub(initial_mastery).filter(|&s| s > 0).ok_or(Error::AlreadyMastered(max_mastery))? as f64;
    let mut policy = recommender.start(&history, &targets)?;
    let mut records = Vec::with_capacity(steps);
    let mut prev = initial_mastery;
    for t in 0..steps {
        let rec = policy.recommend(mode, rng)?;
        let correct = session.answer(rec.question)?;
        policy.observe(rec.question, correct)?;
        let mastery = session.mastery(&targets);
        let reward = match reward_mode {
            RewardMode::Telescoping => (mastery as f64 - prev as f64) / span,
            RewardMode::TerminalOnly if t + 1 == steps => (mastery as f64 - initial_mastery as f64) / span,
            RewardMode::TerminalOnly => 0.0,
        };
        prev = mastery;
        records.push(StepRecord {
            concepts: rec
                .high
                .as_ref()
                .map(|d| d.chosen.iter().map(|&c| ConceptId(c)).collect())
                .unwrap_or_default(),
            concept_log_prob: rec.high.as_ref().map(|d| d.log_prob),
            question_log_prob: rec.low.as_ref().map(|d| d.log_prob),
            state_high: rec.state_high,
            state_low: rec.state_low,
            candidates: rec.candidates,
            question: rec.question,
            reward,
            correct,
            predicted: rec.predicted_correct,
            mastery,
        });
    }
    let delta_u = learning_effect(prev as f64, initial_mastery as f64, max_mastery as f64)?;
    Ok(Trajectory {
        history,
        targets,
        steps: records,
        initial_mastery,
        max_mastery,
        final_mastery: prev,
        delta_u,
    })
}

/// Discounted returns `r̂_t = r_t + γ r̂_{t+1}`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

pub fn loss_high(trajectory: &Trajectory, returns: &[f64]) -> f64 {
    trajectory
        .steps
        .iter()
        .zip(returns)
        .filter_map(|(s, r)| s.concept_log_prob.map(|lp| -r * lp))
        .sum()
}

pub fn loss_low(trajectory: &Trajectory, returns: &[f64]) -> f64 {
    trajectory
        .steps
        .iter()
        .zip(returns)
        .filter_map(|(s, r)| s.question_log_prob.map(|lp| -r * lp))
        .sum()
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of one prediction, clamped away from 0 and 1.
pub fn bce(y: bool, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn loss_aux(trajectory: &Trajectory) -> f64 {
    trajectory
        .steps
        .iter()
        .filter_map(|s| s.predicted.map(|p| bce(s.correct, p)))
        .sum()
}

pub fn loss_total(loss_h: f64, loss_l: f64, loss_p: f64, alpha: f64) -> f64 {
    loss_h + loss_l + alpha * loss_p
}
