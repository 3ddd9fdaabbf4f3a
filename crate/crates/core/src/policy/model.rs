use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig, BackboneRegistry, BackboneSpec};
use super::{ActionDistribution, DecisionMode, PolicyDecision, Recommendation, Recommender, RecommenderSession};
use crate::curriculum::{ConceptId, CurriculumMap, InteractionRecord, LearningHistory, LearningTarget, QuestionId};
use crate::encoder::{Encoder, EncoderConfig, LearningState, Level, RecurrentState};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Linear, ParamSet};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub backbone: BackboneConfig,
    /// Concepts selected per step.
    pub k: usize,
    /// Skip concept selection and choose among all questions.
    pub disable_high: bool,
    pub replace_backbone_with_linear: bool,
    pub freeze_backbone: bool,
    /// Hidden width of the correctness-prediction head.
    pub aux_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            k: 1,
            disable_high: false,
            replace_backbone_with_linear: false,
            freeze_backbone: false,
            aux_hidden: 64,
        }
    }
}

impl PolicyConfig {
    pub fn backbone_kind(&self) -> &str {
        if self.replace_backbone_with_linear {
            "linear"
        } else {
            &self.backbone.kind
        }
    }

    pub fn validate(&self, d_m: usize, registry: &BackboneRegistry) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("policy.k must be at least 1".into()));
        }
        if self.aux_hidden == 0 {
            return Err(Error::Config("policy.aux_hidden must be at least 1".into()));
        }
        self.backbone.validate(d_m)?;
        if !registry.contains(self.backbone_kind()) {
            return Err(Error::UnknownStrategy {
                kind: "backbone",
                name: self.backbone_kind().to_string(),
            });
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub n_concepts: usize,
    pub n_questions: usize,
    pub init_seed: u64,
}

/// Correctness prediction `sigmoid(f_p(h)[q])`: a one-hidden-layer tanh MLP with one logit per question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl AuxHead {
    fn new(params: &mut ParamSet, d_h: usize, width: usize, n_questions: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: Linear::new(params, "aux.hidden", d_h, width, true, rng),
            out: Linear::new(params, "aux.out", width, n_questions, true, rng),
        }
    }

    /// Returns the hidden activation and the logit for question `q`.
    pub fn forward(&self, p: &[f64], h: &[f64], q: QuestionId) -> (Vec<f64>, f64) {
        let a: Vec<f64> = self.hidden.forward(p, h).iter().map(|v| v.tanh()).collect();
        let z = self.out.forward_unit(p, &a, q.0);
        (a, z)
    }

    pub fn predict(&self, p: &[f64], h: &[f64], q: QuestionId) -> f64 {
        sigmoid(self.forward(p, h, q).1)
    }

    pub fn backward(&self, p: &[f64], h: &[f64], a: &[f64], q: QuestionId, dz: f64, grads: &mut [f64]) -> Vec<f64> {
        let da = self.out.backward_unit(p, a, q.0, dz, grads);
        let dpre: Vec<f64> = da.iter().zip(a).map(|(d, a)| d * (1.0 - a * a)).collect();
        self.hidden.backward(p, h, &dpre, grads)
    }
}

#[derive(Clone, Debug)]
pub struct HierModel {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub high: Arc<dyn Backbone>,
    pub low: Arc<dyn Backbone>,
    pub aux: AuxHead,
}

impl HierModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        Self::with_registry(spec, &BackboneRegistry::default())
    }

    pub fn with_registry(spec: ModelSpec, registry: &BackboneRegistry) -> Result<Self> {
        spec.encoder.validate()?;
        spec.policy.validate(spec.encoder.d_m, registry)?;
        if spec.n_concepts == 0 || spec.n_questions == 0 {
            return Err(Error::Config("model needs at least one concept and one question".into()));
        }
        let mut params = ParamSet::new();
        let mut r = rng::stream(spec.init_seed, "init", 0);
        let encoder = Encoder::new(&mut params, &spec.encoder, spec.n_concepts, spec.n_questions, &mut r)?;
        let kind = spec.policy.backbone_kind().to_string();
        let d_m = spec.encoder.d_m;
        let high = registry.build(
            &kind,
            &mut params,
            &BackboneSpec {
                prefix: "high",
                config: &spec.policy.backbone,
                d_m,
                n_actions: spec.n_concepts,
            },
            &mut r,
        )?;
        let low = registry.build(
            &kind,
            &mut params,
            &BackboneSpec {
                prefix: "low",
                config: &spec.policy.backbone,
                d_m,
                n_actions: spec.n_questions,
            },
            &mut r,
        )?;
        let aux = AuxHead::new(&mut params, spec.encoder.d_h, spec.policy.aux_hidden, spec.n_questions, &mut r);
        Ok(Self {
            spec,
            params,
            encoder,
            high,
            low,
            aux,
        })
    }

    /// Rebuilds the layout from `spec` and loads `params` into it.
    pub fn from_params(spec: ModelSpec, params: &ParamSet) -> Result<Self> {
        let mut model = Self::new(spec)?;
        model
            .params
            .load_from(params)
            .map_err(|e| Error::Config(format!("parameter layout mismatch: {e}")))?;
        Ok(model)
    }

    pub fn n_concepts(&self) -> usize {
        self.spec.n_concepts
    }

    pub fn n_questions(&self) -> usize {
        self.spec.n_questions
    }

    pub fn backbone_ranges(&self) -> Vec<Range<usize>> {
        let mut r = self.params.ranges_with_prefix(&format!("{}.", self.high.prefix()));
        r.extend(self.params.ranges_with_prefix(&format!("{}.", self.low.prefix())));
        r
    }

    /// Adam update mask; `None` when every parameter trains.
    pub fn trainable_mask(&self) -> Option<Vec<bool>> {
        if !self.spec.policy.freeze_backbone {
            return None;
        }
        let mut mask = vec![true; self.params.len()];
        for range in self.backbone_ranges() {
            mask[range].iter_mut().for_each(|m| *m = false);
        }
        Some(mask)
    }

    fn backbone(&self, level: Level) -> &dyn Backbone {
        match level {
            Level::High => self.high.as_ref(),
            Level::Low => self.low.as_ref(),
        }
    }

    pub fn score_actions(&self, s: &LearningState, actions: &[usize]) -> Result<Vec<f64>> {
        if s.vector.len() != self.spec.encoder.d_m {
            return Err(Error::DimensionMismatch {
                what: "learning state",
                expected: self.spec.encoder.d_m,
                actual: s.vector.len(),
            });
        }
        Ok(self.backbone(s.level).forward(self.params.values(), &s.vector, actions)?.logits)
    }

    /// Chooses `k` distinct concepts from the whole concept set.
    pub fn high_step(&self, s_h: &LearningState, k: usize, mode: DecisionMode, rng: &mut Rng) -> Result<PolicyDecision> {
        let m = self.n_concepts();
        if k == 0 || k > m {
            return Err(Error::KTooLarge { k, available: m });
        }
        let support: Vec<usize> = (0..m).collect();
        let logits = self.score_actions(s_h, &support)?;
        let dist = ActionDistribution::from_logits(support, &logits)?;
        PolicyDecision::decide(Level::High, dist, k, mode, rng)
    }

    /// Chooses one question among `candidates`.
    pub fn low_step(&self, s_l: &LearningState, candidates: &[QuestionId], mode: DecisionMode, rng: &mut Rng) -> Result<PolicyDecision> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        let support: Vec<usize> = candidates.iter().map(|q| q.0).collect();
        let logits = self.score_actions(s_l, &support)?;
        let dist = ActionDistribution::from_logits(support, &logits)?;
        PolicyDecision::decide(Level::Low, dist, 1, mode, rng)
    }

    pub fn flat_step(&self, s_l: &LearningState, mode: DecisionMode, rng: &mut Rng) -> Result<PolicyDecision> {
        let all: Vec<QuestionId> = (0..self.n_questions()).map(QuestionId).collect();
        self.low_step(s_l, &all, mode, rng)
    }

    pub fn predict_correct(&self, h: &[f64], q: QuestionId) -> f64 {
        self.aux.predict(self.params.values(), h, q)
    }
}

/// The trained hierarchical recommender over a fixed curriculum.
#[derive(Clone, Debug)]
pub struct HierPolicy {
    model: Arc<HierModel>,
    curriculum: Arc<CurriculumMap>,
    k: usize,
}

impl HierPolicy {
    pub fn new(model: Arc<HierModel>, curriculum: Arc<CurriculumMap>) -> Result<Self> {
        if curriculum.n_concepts() != model.n_concepts() || curriculum.n_questions() != model.n_questions() {
            return Err(Error::Config(format!(
                "model built for {} concepts / {} questions, curriculum has {} / {}",
                model.n_concepts(),
                model.n_questions(),
                curriculum.n_concepts(),
                curriculum.n_questions()
            )));
        }
        let k = model.spec.policy.k;
        Ok(Self { model, curriculum, k })
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn model(&self) -> &Arc<HierModel> {
        &self.model
    }

    pub fn curriculum(&self) -> &Arc<CurriculumMap> {
        &self.curriculum
    }

    pub fn hier_session(&self, history: &LearningHistory, targets: &LearningTarget) -> Result<HierSession<'_>> {
        let model = self.model.as_ref();
        let p = model.params.values();
        let enc = &model.encoder;
        let mut state = enc.history.zero_state();
        for r in &history.records {
            state = enc.history.advance(p, &state, r)?;
        }
        let target_term = enc.fusion.target.forward(p, &enc.encode_target(p, targets)?);
        let (concept_term, flat_term) = if model.spec.policy.disable_high {
            let all: Vec<usize> = (0..model.n_questions()).collect();
            (None, Some(enc.fusion.candidates.forward(p, &enc.encode_questions(p, &all)?)))
        } else {
            let all: Vec<usize> = (0..model.n_concepts()).collect();
            (Some(enc.fusion.concepts.forward(p, &enc.encode_concepts(p, &all)?)), None)
        };
        Ok(HierSession {
            policy: self,
            state,
            target_term,
            concept_term,
            flat_term,
            candidate_terms: HashMap::new(),
        })
    }
}

/// Incremental per-student state of a [`HierPolicy`].
pub struct HierSession<'a> {
    policy: &'a HierPolicy,
    state: RecurrentState,
    target_term: Vec<f64>,
    concept_term: Option<Vec<f64>>,
    flat_term: Option<Vec<f64>>,
    candidate_terms: HashMap<Vec<QuestionId>, Vec<f64>>,
}

impl HierSession<'_> {
    pub fn history_state(&self) -> &[f64] {
        &self.state.0
    }

    fn candidate_term(&mut self, candidates: &[QuestionId]) -> Result<Vec<f64>> {
        if let Some(t) = self.candidate_terms.get(candidates) {
            return Ok(t.clone());
        }
        let model = self.policy.model.as_ref();
        let p = model.params.values();
        let ids: Vec<usize> = candidates.iter().map(|q| q.0).collect();
        let term = model
            .encoder
            .fusion
            .candidates
            .forward(p, &model.encoder.encode_questions(p, &ids)?);
        self.candidate_terms.insert(candidates.to_vec(), term.clone());
        Ok(term)
    }
}

impl Recommender for HierPolicy {
    fn name(&self) -> &str {
        "hierarchical"
    }

    fn start<'a>(&'a self, history: &LearningHistory, targets: &LearningTarget) -> Result<Box<dyn RecommenderSession + 'a>> {
        Ok(Box::new(self.hier_session(history, targets)?))
    }
}

impl RecommenderSession for HierSession<'_> {
    fn recommend(&mut self, mode: DecisionMode, rng: &mut Rng) -> Result<Recommendation> {
        let policy = self.policy;
        let model = policy.model.as_ref();
        let p = model.params.values();
        let fusion = &model.encoder.fusion;
        let h = &self.state.0;
        let history_term = fusion.history.forward(p, h);
        if let Some(flat) = &self.flat_term {
            let s_l = fusion.combine(p, Level::Low, &history_term, &self.target_term, flat);
            let low = model.flat_step(&s_l, mode, rng)?;
            let question = QuestionId(low.chosen[0]);
            return Ok(Recommendation {
                question,
                high: None,
                low: Some(low),
                candidates: (0..model.n_questions()).map(QuestionId).collect(),
                predicted_correct: Some(model.aux.predict(p, h, question)),
                state_high: None,
                state_low: Some(s_l),
            });
        }
        let concept_term = self.concept_term.as_ref().expect("concept term exists when hierarchy is enabled");
        let s_h = fusion.combine(p, Level::High, &history_term, &self.target_term, concept_term);
        let high = model.high_step(&s_h, policy.k, mode, rng)?;
        let concepts: Vec<ConceptId> = high.chosen.iter().map(|&c| ConceptId(c)).collect();
        let candidates = policy.curriculum.questions_for_concepts(&concepts)?;
        let cand_term = self.candidate_term(&candidates)?;
        let s_l = fusion.combine(p, Level::Low, &history_term, &self.target_term, &cand_term);
        let low = model.low_step(&s_l, &candidates, mode, rng)?;
        let question = QuestionId(low.chosen[0]);
        Ok(Recommendation {
            question,
            high: Some(high),
            low: Some(low),
            candidates,
            predicted_correct: Some(model.aux.predict(p, &self.state.0, question)),
            state_high: Some(s_h),
            state_low: Some(s_l),
        })
    }

    fn observe(&mut self, question: QuestionId, correct: bool) -> Result<()> {
        let model = self.policy.model.as_ref();
        self.state = model
            .encoder
            .history
            .advance(model.params.values(), &self.state, &InteractionRecord::new(question, correct))?;
        Ok(())
    }
}
