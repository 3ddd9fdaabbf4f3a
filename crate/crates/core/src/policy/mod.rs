//! Two-level decision making: concept selection, candidate filtering and
//! question selection.
//!
//! Recommenders (the hierarchical policy, the random baseline) implement
//! [`Recommender`] and are selectable by name through [`RecommenderRegistry`];
//! decision backbones are likewise registered in [`BackboneRegistry`].

mod backbone;
mod model;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use backbone::{
    Backbone, BackboneConfig, BackboneFactory, BackboneRegistry, BackboneSpec, BackboneTrace, LinearPointer,
    MlpPointer,
};
pub use model::{AuxHead, HierModel, HierPolicy, HierSession, ModelSpec, PolicyConfig};

use crate::curriculum::{CurriculumMap, LearningHistory, LearningTarget, QuestionId};
use crate::encoder::{Level, LearningState};
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    Sample,
    #[default]
    Greedy,
}

/// Probabilities over an ordered list of unique action ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    support: Vec<usize>,
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(support: Vec<usize>, logits: &[f64]) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        if support.len() != logits.len() {
            return Err(Error::DimensionMismatch {
                what: "logits",
                expected: support.len(),
                actual: logits.len(),
            });
        }
        Ok(Self {
            probs: softmax(logits),
            support,
        })
    }

    pub fn uniform(support: Vec<usize>) -> Result<Self> {
        let logits = vec![0.0; support.len()];
        Self::from_logits(support, &logits)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Probability of `id`; zero outside the support.
    pub fn prob(&self, id: usize) -> f64 {
        self.support
            .iter()
            .position(|&a| a == id)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn log_prob_of(&self, ids: &[usize]) -> f64 {
        ids.iter().map(|&id| self.prob(id).ln()).sum()
    }

    /// The `k` most probable ids, ties broken by smallest id.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.probs[b]
                .total_cmp(&self.probs[a])
                .then(self.support[a].cmp(&self.support[b]))
        });
        order.into_iter().take(k).map(|i| self.support[i]).collect()
    }

    /// `k` distinct ids drawn one at a time, renormalizing over those not yet drawn.
    pub fn sample_k(&self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let mut available = vec![true; self.len()];
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k.min(self.len()) {
            let total: f64 = (0..self.len()).filter(|&i| available[i]).map(|i| self.probs[i]).sum();
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last = 0;
            for i in (0..self.len()).filter(|&i| available[i]) {
                acc += self.probs[i];
                last = i;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            let i = pick.unwrap_or(last);
            available[i] = false;
            chosen.push(self.support[i]);
        }
        chosen
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDecision {
    pub level: Level,
    pub distribution: ActionDistribution,
    pub chosen: Vec<usize>,
    /// Sum of the chosen ids' log-probabilities.
    pub log_prob: f64,
}

impl PolicyDecision {
    pub fn decide(level: Level, distribution: ActionDistribution, k: usize, mode: DecisionMode, rng: &mut Rng) -> Result<Self> {
        if k == 0 || k > distribution.len() {
            return Err(Error::KTooLarge {
                k,
                available: distribution.len(),
            });
        }
        let chosen = match mode {
            DecisionMode::Greedy => distribution.top_k(k),
            DecisionMode::Sample => distribution.sample_k(k, rng),
        };
        let log_prob = distribution.log_prob_of(&chosen);
        Ok(Self {
            level,
            distribution,
            chosen,
            log_prob,
        })
    }
}

/// One recommendation and the decisions that produced it.
#[derive(Clone, Debug)]
pub struct Recommendation {
    pub question: QuestionId,
    pub high: Option<PolicyDecision>,
    pub low: Option<PolicyDecision>,
    /// Questions the low level chose from.
    pub candidates: Vec<QuestionId>,
    pub predicted_correct: Option<f64>,
    pub state_high: Option<LearningState>,
    pub state_low: Option<LearningState>,
}

pub trait Recommender: Send + Sync {
    fn name(&self) -> &str;

    fn start<'a>(&'a self, history: &LearningHistory, targets: &LearningTarget) -> Result<Box<dyn RecommenderSession + 'a>>;
}

/// Per-student recommendation state.
pub trait RecommenderSession {
    fn recommend(&mut self, mode: DecisionMode, rng: &mut Rng) -> Result<Recommendation>;

    fn observe(&mut self, question: QuestionId, correct: bool) -> Result<()>;
}

/// Uniform choice over the whole question set.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    n_questions: usize,
}

impl RandomPolicy {
    pub fn new(n_questions: usize) -> Result<Self> {
        if n_questions == 0 {
            return Err(Error::EmptyCandidateSet);
        }
        Ok(Self { n_questions })
    }
}

struct RandomSession {
    n_questions: usize,
}

impl Recommender for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn start<'a>(&'a self, _: &LearningHistory, _: &LearningTarget) -> Result<Box<dyn RecommenderSession + 'a>> {
        Ok(Box::new(RandomSession {
            n_questions: self.n_questions,
        }))
    }
}

impl RecommenderSession for RandomSession {
    fn recommend(&mut self, _: DecisionMode, rng: &mut Rng) -> Result<Recommendation> {
        Ok(Recommendation {
            question: QuestionId(rng.gen_range(0..self.n_questions)),
            high: None,
            low: None,
            candidates: Vec::new(),
            predicted_correct: None,
            state_high: None,
            state_low: None,
        })
    }

    fn observe(&mut self, _: QuestionId, _: bool) -> Result<()> {
        Ok(())
    }
}

pub struct RecommenderContext {
    pub curriculum: Arc<CurriculumMap>,
    pub model: Option<Arc<HierModel>>,
    /// Overrides the model's configured concept count.
    pub k: Option<usize>,
}

pub type RecommenderFactory = fn(&RecommenderContext) -> Result<Arc<dyn Recommender>>;

/// Recommenders selectable by name.
pub struct RecommenderRegistry {
    factories: BTreeMap<&'static str, RecommenderFactory>,
}

impl RecommenderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: RecommenderFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, ctx: &RecommenderContext) -> Result<Arc<dyn Recommender>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "recommender",
            name: name.to_string(),
        })?;
        factory(ctx)
    }
}

impl Default for RecommenderRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("random", |ctx| Ok(Arc::new(RandomPolicy::new(ctx.curriculum.n_questions())?)));
        reg.register("hierarchical", |ctx| {
            let model = ctx
                .model
                .clone()
                .ok_or_else(|| Error::Config("hierarchical recommender requires a model".into()))?;
            let mut policy = HierPolicy::new(model, ctx.curriculum.clone())?;
            if let Some(k) = ctx.k {
                policy = policy.with_k(k);
            }
            Ok(Arc::new(policy))
        });
        reg
    }
}
