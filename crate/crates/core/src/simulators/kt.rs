//! Data-driven student backed by a trained knowledge-tracing model.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dkt::KtState;
use super::{AnswerMode, KtModel, Reset, Simulator, SimulatorSession};
use crate::curriculum::{LearningHistory, LearningTarget, QuestionId};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtSimConfig {
    pub hidden_dim: usize,
    pub warmup_len: usize,
    pub n_targets: usize,
    pub max_steps: usize,
    pub answer_mode: AnswerMode,
    /// Checkpoint of the trained model, relative to the output directory when not absolute.
    pub model_path: Option<String>,
}

impl Default for KtSimConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            warmup_len: 20,
            n_targets: 400,
            max_steps: 200,
            answer_mode: AnswerMode::Sample,
            model_path: None,
        }
    }
}

pub struct KtSimulator {
    config: KtSimConfig,
    model: Arc<KtModel>,
}

impl KtSimulator {
    pub fn new(config: KtSimConfig, model: Arc<KtModel>) -> Result<Self> {
        if config.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if config.n_targets == 0 || config.n_targets > model.n_questions() {
            return Err(Error::Config(format!(
                "n_targets = {} must be in 1..={}",
                config.n_targets,
                model.n_questions()
            )));
        }
        Ok(Self { config, model })
    }
}

impl Simulator for KtSimulator {
    fn kind(&self) -> &'static str {
        "kt"
    }

    fn n_questions(&self) -> usize {
        self.model.n_questions()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn default_warmup(&self) -> usize {
        self.config.warmup_len
    }

    fn sample_targets(&self, rng: &mut Rng) -> LearningTarget {
        let n = self.model.n_questions();
        let picked = sample(rng, n, self.config.n_targets).into_iter().map(QuestionId);
        LearningTarget::new(picked, n).expect("sampled targets are valid")
    }

    fn reset(&self, targets: &LearningTarget, warmup_len: usize, seed: u64) -> Result<Reset> {
        let mut session = KtSession {
            model: self.model.clone(),
            state: self.model.initial_state(),
            steps: 0,
            max_steps: self.config.max_steps,
            answer_mode: self.config.answer_mode,
            rng: rng::stream(seed, "kt-answers", 0),
        };
        let mut history = LearningHistory::new();
        let n = self.model.n_questions();
        for _ in 0..warmup_len {
            let q = QuestionId(session.rng.gen_range(0..n));
            let y = session.respond(q);
            history.push(q, y);
        }
        let initial_mastery = session.mastery(targets);
        Ok(Reset {
            session: Box::new(session),
            history,
            initial_mastery,
        })
    }
}

struct KtSession {
    model: Arc<KtModel>,
    state: KtState,
    steps: usize,
    max_steps: usize,
    answer_mode: AnswerMode,
    rng: Rng,
}

impl KtSession {
    fn respond(&mut self, q: QuestionId) -> bool {
        let p = self.model.prob(&self.state, q);
        let correct = match self.answer_mode {
            AnswerMode::Sample => self.rng.gen_bool(p.clamp(0.0, 1.0)),
            AnswerMode::Threshold => p >= 0.5,
        };
        self.state = self.model.advance(&self.state, q, correct);
        correct
    }
}

impl SimulatorSession for KtSession {
    fn answer(&mut self, q: QuestionId) -> Result<bool> {
        if self.steps >= self.max_steps {
            return Err(Error::StepLimitExceeded(self.max_steps));
        }
        if q.0 >= self.model.n_questions() {
            return Err(Error::OutOfRangeId {
                kind: "question",
                id: q.0,
                size: self.model.n_questions(),
            });
        }
        self.steps += 1;
        Ok(self.respond(q))
    }

    fn correct_prob(&self, q: QuestionId) -> f64 {
        self.model.prob(&self.state, q)
    }

    fn mastery(&self, targets: &LearningTarget) -> usize {
        let probs = self.model.probs(&self.state);
        targets.questions().iter().filter(|q| probs[q.0] >= 0.5).count()
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }
}
