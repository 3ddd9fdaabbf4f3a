//! Simulated students.
//!
//! Every simulator kind implements [`Simulator`] and is registered by name in
//! [`SimulatorRegistry`]; sessions are single-owner mutable state.

mod dkt;
mod kss;
mod kt;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dkt::{auc, KtModel, KtTrainConfig, KtTrainReport, KT_SCHEMA_VERSION};
pub use kss::{irt_prob, KssConfig, KssSimulator, REFERENCE_DIFFICULTY, REFERENCE_PREREQUISITES};
pub use kt::{KtSimConfig, KtSimulator};

use crate::curriculum::{CurriculumMap, LearningHistory, LearningTarget, QuestionId};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    Sample,
    Threshold,
}

/// A running simulated student.
pub trait SimulatorSession: Send {
    /// Answers `q`, advancing the student's state.
    fn answer(&mut self, q: QuestionId) -> Result<bool>;

    /// Probability of a correct answer to `q` in the current state. Read-only.
    fn correct_prob(&self, q: QuestionId) -> f64;

    /// Number of targets answered correctly with probability at least 0.5. Read-only.
    fn mastery(&self, targets: &LearningTarget) -> usize {
        targets
            .questions()
            .iter()
            .filter(|&&q| self.correct_prob(q) >= 0.5)
            .count()
    }

    fn steps_taken(&self) -> usize;

    fn max_steps(&self) -> usize;
}

pub struct Reset {
    pub session: Box<dyn SimulatorSession>,
    pub history: LearningHistory,
    /// Target mastery at the end of the reset (E_b).
    pub initial_mastery: usize,
}

pub trait Simulator: Send + Sync {
    fn kind(&self) -> &'static str;

    fn n_questions(&self) -> usize;

    fn max_steps(&self) -> usize;

    fn default_warmup(&self) -> usize;

    fn sample_targets(&self, rng: &mut rng::Rng) -> LearningTarget;

    /// Fresh student, warmed up with `warmup_len` answers to uniformly random questions.
    fn reset(&self, targets: &LearningTarget, warmup_len: usize, seed: u64) -> Result<Reset>;
}

/// Everything a rollout needs at t = 0.
pub struct EpisodeStart {
    pub session: Box<dyn SimulatorSession>,
    pub history: LearningHistory,
    pub targets: LearningTarget,
    pub initial_mastery: usize,
}

const MAX_RESAMPLES: u64 = 1000;

/// Samples targets and resets the simulator, resampling while the targets are already mastered.
pub fn start_episode(sim: &dyn Simulator, warmup_len: usize, seed: u64) -> Result<EpisodeStart> {
    let mut last = 0;
    for attempt in 0..MAX_RESAMPLES {
        let mut target_rng = rng::stream(seed, "targets", attempt);
        let targets = sim.sample_targets(&mut target_rng);
        let reset = sim.reset(&targets, warmup_len, rng::derive_seed(seed, "reset", attempt))?;
        if reset.initial_mastery < targets.len() {
            return Ok(EpisodeStart {
                session: reset.session,
                history: reset.history,
                targets,
                initial_mastery: reset.initial_mastery,
            });
        }
        last = targets.len();
    }
    Err(Error::AlreadyMastered(last))
}

pub struct SimBuildContext<'a> {
    pub curriculum: &'a Arc<CurriculumMap>,
    pub kss: &'a KssConfig,
    pub kt: &'a KtSimConfig,
    /// Trained model for the `kt` kind.
    pub kt_model: Option<Arc<KtModel>>,
}

pub type SimulatorFactory = fn(&SimBuildContext<'_>) -> Result<Arc<dyn Simulator>>;

/// Simulator kinds selectable by name.
pub struct SimulatorRegistry {
    factories: BTreeMap<&'static str, SimulatorFactory>,
}

impl SimulatorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: SimulatorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, ctx: &SimBuildContext<'_>) -> Result<Arc<dyn Simulator>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "simulator",
            name: name.to_string(),
        })?;
        factory(ctx)
    }
}

impl Default for SimulatorRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("kss", |ctx| {
            Ok(Arc::new(KssSimulator::new(ctx.kss.clone(), ctx.curriculum.clone())?) as Arc<dyn Simulator>)
        });
        reg.register("kt", |ctx| {
            let model = ctx
                .kt_model
                .clone()
                .ok_or_else(|| Error::Config("kt simulator requires a trained model".into()))?;
            Ok(Arc::new(KtSimulator::new(ctx.kt.clone(), model)?) as Arc<dyn Simulator>)
        });
        reg
    }
}
