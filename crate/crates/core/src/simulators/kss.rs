//! Rule-based student: IRT answers over per-concept abilities that grow with
//! practice, gated by a prerequisite graph.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AnswerMode, Reset, Simulator, SimulatorSession};
use crate::curriculum::{CurriculumMap, LearningHistory, LearningTarget, QuestionId};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::rng::{self, Rng};

/// `(prerequisite, concept)` edges of the ten-concept reference graph.
pub const REFERENCE_PREREQUISITES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 3),
    (1, 4),
    (3, 5),
    (4, 5),
    (3, 6),
    (5, 7),
    (6, 7),
    (7, 8),
    (6, 9),
];

/// Item difficulty of the reference questions, rising with graph depth.
pub const REFERENCE_DIFFICULTY: [f64; 10] = [1.0, 1.5, 1.5, 2.0, 2.0, 2.5, 2.5, 2.5, 2.5, 2.5];

/// Three-parameter logistic item response with the 1.7 scaling constant.
pub fn irt_prob(discrimination: f64, difficulty: f64, guess: f64, ability: f64) -> f64 {
    guess + (1.0 - guess) * sigmoid(1.7 * discrimination * (ability - difficulty))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KssConfig {
    pub n_items: usize,
    /// `(prerequisite, concept)` pairs; derived from the curriculum when absent.
    pub prerequisite_edges: Option<Vec<(usize, usize)>>,
    pub discrimination: f64,
    /// Per-question difficulty; derived from graph depth when absent.
    pub difficulty: Option<Vec<f64>>,
    pub guess: f64,
    pub mastery_gain: f64,
    pub locked_gain: f64,
    pub prereq_threshold: f64,
    pub ability_cap: f64,
    pub max_steps: usize,
    pub init_ability_max: f64,
    pub target_size_min: usize,
    pub target_size_max: usize,
    pub warmup_len: usize,
    pub answer_mode: AnswerMode,
    /// Seed for derived graph structure on non-reference curricula.
    pub structure_seed: u64,
}

impl Default for KssConfig {
    fn default() -> Self {
        Self {
            n_items: 10,
            prerequisite_edges: None,
            discrimination: 1.0,
            difficulty: None,
            guess: 0.1,
            mastery_gain: 1.0,
            locked_gain: 0.1,
            prereq_threshold: 2.0,
            ability_cap: 3.0,
            max_steps: 30,
            init_ability_max: 1.0,
            target_size_min: 3,
            target_size_max: 6,
            warmup_len: 20,
            answer_mode: AnswerMode::Sample,
            structure_seed: 0,
        }
    }
}

#[derive(Debug)]
struct Structure {
    prerequisites: Vec<Vec<usize>>,
    difficulty: Vec<f64>,
}

pub struct KssSimulator {
    config: KssConfig,
    curriculum: Arc<CurriculumMap>,
    structure: Arc<Structure>,
}

impl KssSimulator {
    pub fn new(config: KssConfig, curriculum: Arc<CurriculumMap>) -> Result<Self> {
        if !(0.0..1.0).contains(&config.guess) {
            return Err(Error::Config(format!("guess must be in [0, 1), got {}", config.guess)));
        }
        if !(config.mastery_gain > config.locked_gain && config.locked_gain > 0.0) {
            return Err(Error::Config("require mastery_gain > locked_gain > 0".into()));
        }
        if config.n_items != curriculum.n_questions() {
            return Err(Error::Config(format!(
                "n_items = {} but the curriculum has {} questions",
                config.n_items,
                curriculum.n_questions()
            )));
        }
        if config.target_size_min == 0 || config.target_size_min > config.target_size_max {
            return Err(Error::Config("require 1 <= target_size_min <= target_size_max".into()));
        }
        if config.target_size_max > curriculum.n_questions() {
            return Err(Error::Config("target_size_max exceeds the number of questions".into()));
        }
        if config.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        let m = curriculum.n_concepts();
        let reference = curriculum.is_one_to_one() && m == REFERENCE_DIFFICULTY.len();
        let edges = match &config.prerequisite_edges {
            Some(edges) => edges.clone(),
            None if reference => REFERENCE_PREREQUISITES.to_vec(),
            None => layered_prerequisites(m, config.structure_seed),
        };
        let mut prerequisites = vec![Vec::new(); m];
        for &(p, c) in &edges {
            if p >= m || c >= m {
                return Err(Error::OutOfRangeId {
                    kind: "concept",
                    id: p.max(c),
                    size: m,
                });
            }
            if !prerequisites[c].contains(&p) {
                prerequisites[c].push(p);
            }
        }
        let depth = topological_depth(&prerequisites)
            .ok_or_else(|| Error::Config("prerequisite graph contains a cycle".into()))?;
        let difficulty = match &config.difficulty {
            Some(d) => {
                if d.len() != curriculum.n_questions() {
                    return Err(Error::DimensionMismatch {
                        what: "kss difficulty",
                        expected: curriculum.n_questions(),
                        actual: d.len(),
                    });
                }
                d.clone()
            }
            None if reference => REFERENCE_DIFFICULTY.to_vec(),
            None => depth_difficulty(&curriculum, &depth),
        };
        Ok(Self {
            config,
            curriculum,
            structure: Arc::new(Structure {
                prerequisites,
                difficulty,
            }),
        })
    }

    pub fn config(&self) -> &KssConfig {
        &self.config
    }

    pub fn prerequisites(&self, concept: usize) -> &[usize] {
        &self.structure.prerequisites[concept]
    }

    pub fn difficulty(&self) -> &[f64] {
        &self.structure.difficulty
    }

    /// Session with explicit initial abilities, for tests and case studies.
    pub fn session_with_abilities(&self, abilities: Vec<f64>, seed: u64) -> KssSession {
        assert_eq!(abilities.len(), self.curriculum.n_concepts());
        KssSession {
            config: self.config.clone(),
            curriculum: self.curriculum.clone(),
            structure: self.structure.clone(),
            ability: abilities
                .into_iter()
                .map(|a| a.clamp(0.0, self.config.ability_cap))
                .collect(),
            steps: 0,
            rng: rng::from_seed(seed),
        }
    }
}

/// Concepts in five layers; each concept past the first layer depends on one or
/// two concepts of the previous layer.
fn layered_prerequisites(m: usize, seed: u64) -> Vec<(usize, usize)> {
    let layers = 5.min(m);
    let layer_of = |c: usize| c * layers / m;
    let mut rng = rng::stream(seed, "kss-structure", 0);
    let mut edges = Vec::new();
    for c in 0..m {
        let layer = layer_of(c);
        if layer == 0 {
            continue;
        }
        let prev: Vec<usize> = (0..m).filter(|&p| layer_of(p) == layer - 1).collect();
        let count = if prev.len() > 1 && rng.gen_bool(0.5) { 2 } else { 1 };
        for idx in sample(&mut rng, prev.len(), count) {
            edges.push((prev[idx], c));
        }
    }
    edges
}

fn topological_depth(prerequisites: &[Vec<usize>]) -> Option<Vec<usize>> {
    let m = prerequisites.len();
    let mut indegree: Vec<usize> = prerequisites.iter().map(Vec::len).collect();
    let mut dependents = vec![Vec::new(); m];
    for (c, ps) in prerequisites.iter().enumerate() {
        for &p in ps {
            dependents[p].push(c);
        }
    }
    let mut depth = vec![0usize; m];
    let mut queue: VecDeque<usize> = (0..m).filter(|&c| indegree[c] == 0).collect();
    let mut seen = 0;
    while let Some(c) = queue.pop_front() {
        seen += 1;
        for &d in &dependents[c] {
            depth[d] = depth[d].max(depth[c] + 1);
            indegree[d] -= 1;
            if indegree[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    (seen == m).then_some(depth)
}

fn depth_difficulty(curriculum: &CurriculumMap, depth: &[usize]) -> Vec<f64> {
    (0..curriculum.n_questions())
        .map(|q| {
            let cs = curriculum.concepts_of(QuestionId(q));
            let mean_depth = cs.iter().map(|c| depth[c.0] as f64).sum::<f64>() / cs.len() as f64;
            (1.0 + 0.375 * mean_depth).min(2.5)
        })
        .collect()
}

impl Simulator for KssSimulator {
    fn kind(&self) -> &'static str {
        "kss"
    }

    fn n_questions(&self) -> usize {
        self.curriculum.n_questions()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn default_warmup(&self) -> usize {
        self.config.warmup_len
    }

    fn sample_targets(&self, rng: &mut Rng) -> LearningTarget {
        let n = self.curriculum.n_questions();
        let size = rng.gen_range(self.config.target_size_min..=self.config.target_size_max);
        let picked = sample(rng, n, size).into_iter().map(QuestionId);
        LearningTarget::new(picked, n).expect("sampled targets are valid")
    }

    fn reset(&self, targets: &LearningTarget, warmup_len: usize, seed: u64) -> Result<Reset> {
        let mut init_rng = rng::stream(seed, "kss-init", 0);
        let abilities = (0..self.curriculum.n_concepts())
            .map(|_| init_rng.gen_range(0.0..=self.config.init_ability_max))
            .collect();
        let mut session = self.session_with_abilities(abilities, rng::derive_seed(seed, "kss-answers", 0));
        let mut history = LearningHistory::new();
        let n = self.curriculum.n_questions();
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

pub struct KssSession {
    config: KssConfig,
    curriculum: Arc<CurriculumMap>,
    structure: Arc<Structure>,
    ability: Vec<f64>,
    steps: usize,
    rng: Rng,
}

impl KssSession {
    pub fn abilities(&self) -> &[f64] {
        &self.ability
    }

    fn effective_ability(&self, q: QuestionId) -> f64 {
        let cs = self.curriculum.concepts_of(q);
        cs.iter().map(|c| self.ability[c.0]).sum::<f64>() / cs.len() as f64
    }

    fn respond(&mut self, q: QuestionId) -> bool {
        let p = self.correct_prob(q);
        let correct = match self.config.answer_mode {
            AnswerMode::Sample => self.rng.gen_bool(p.clamp(0.0, 1.0)),
            AnswerMode::Threshold => p >= 0.5,
        };
        self.practice(q);
        correct
    }

    fn practice(&mut self, q: QuestionId) {
        let cs: Vec<usize> = self.curriculum.concepts_of(q).iter().map(|c| c.0).collect();
        let gains: Vec<f64> = cs
            .iter()
            .map(|&c| {
                let unlocked = self.structure.prerequisites[c]
                    .iter()
                    .all(|&p| self.ability[p] >= self.config.prereq_threshold);
                if unlocked {
                    self.config.mastery_gain
                } else {
                    self.config.locked_gain
                }
            })
            .collect();
        for (c, gain) in cs.into_iter().zip(gains) {
            self.ability[c] = (self.ability[c] + gain).clamp(0.0, self.config.ability_cap);
        }
    }
}

impl SimulatorSession for KssSession {
    fn answer(&mut self, q: QuestionId) -> Result<bool> {
        if self.steps >= self.config.max_steps {
            return Err(Error::StepLimitExceeded(self.config.max_steps));
        }
        if q.0 >= self.curriculum.n_questions() {
            return Err(Error::OutOfRangeId {
                kind: "question",
                id: q.0,
                size: self.curriculum.n_questions(),
            });
        }
        self.steps += 1;
        Ok(self.respond(q))
    }

    fn correct_prob(&self, q: QuestionId) -> f64 {
        irt_prob(
            self.config.discrimination,
            self.structure.difficulty[q.0],
            self.config.guess,
            self.effective_ability(q),
        )
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}
