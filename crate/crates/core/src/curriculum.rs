//! Concepts, questions and the many-to-many relation between them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuestionId(pub usize);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub question: QuestionId,
    pub correct: bool,
}

impl InteractionRecord {
    pub fn new(question: QuestionId, correct: bool) -> Self {
        Self { question, correct }
    }
}

/// Interactions in learning-time order. Empty is a legal (cold-start) history.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningHistory {
    pub records: Vec<InteractionRecord>,
}

impl LearningHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, question: QuestionId, correct: bool) {
        self.records.push(InteractionRecord::new(question, correct));
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Non-empty, duplicate-free set of target questions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningTarget {
    questions: Vec<QuestionId>,
}

impl LearningTarget {
    pub fn new(questions: impl IntoIterator<Item = QuestionId>, n_questions: usize) -> Result<Self> {
        let set: BTreeSet<QuestionId> = questions.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        if let Some(q) = set.iter().find(|q| q.0 >= n_questions) {
            return Err(Error::OutOfRangeId {
                kind: "question",
                id: q.0,
                size: n_questions,
            });
        }
        Ok(Self {
            questions: set.into_iter().collect(),
        })
    }

    pub fn questions(&self) -> &[QuestionId] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Bipartite concept/question relation with lookups in both directions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumMap {
    n_concepts: usize,
    n_questions: usize,
    question_concepts: Vec<Vec<ConceptId>>,
    concept_questions: Vec<Vec<QuestionId>>,
}

impl CurriculumMap {
    /// Builds the map from `(question, concept)` edges. Duplicate edges collapse.
    pub fn build(n_concepts: usize, n_questions: usize, edges: &[(QuestionId, ConceptId)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyEdgeList);
        }
        let mut question_concepts = vec![BTreeSet::new(); n_questions];
        let mut concept_questions = vec![BTreeSet::new(); n_concepts];
        for &(q, c) in edges {
            if q.0 >= n_questions {
                return Err(Error::OutOfRangeId {
                    kind: "question",
                    id: q.0,
                    size: n_questions,
                });
            }
            if c.0 >= n_concepts {
                return Err(Error::OutOfRangeId {
                    kind: "concept",
                    id: c.0,
                    size: n_concepts,
                });
            }
            question_concepts[q.0].insert(c);
            concept_questions[c.0].insert(q);
        }
        if let Some(orphan) = question_concepts.iter().position(BTreeSet::is_empty) {
            return Err(Error::OrphanQuestion(orphan));
        }
        Ok(Self {
            n_concepts,
            n_questions,
            question_concepts: question_concepts.into_iter().map(|s| s.into_iter().collect()).collect(),
            concept_questions: concept_questions.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// One question per concept, question `i` belonging to concept `i`.
    pub fn one_to_one(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|i| (QuestionId(i), ConceptId(i))).collect();
        Self::build(n, n, &edges)
    }

    /// Random curriculum where question `q` always covers concept `q % m` and, with
    /// probability `extra_concept_prob`, one more uniformly chosen concept.
    pub fn synthetic(n_concepts: usize, n_questions: usize, extra_concept_prob: f64, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        if n_concepts == 0 || n_questions < n_concepts {
            return Err(Error::Config(format!(
                "synthetic curriculum needs 1 <= concepts <= questions, got {n_concepts}/{n_questions}"
            )));
        }
        let mut rng = crate::rng::stream(seed, "curriculum", 0);
        let mut edges = Vec::new();
        for q in 0..n_questions {
            edges.push((QuestionId(q), ConceptId(q % n_concepts)));
            if rng.gen_bool(extra_concept_prob.clamp(0.0, 1.0)) {
                edges.push((QuestionId(q), ConceptId(rng.gen_range(0..n_concepts))));
            }
        }
        Self::build(n_concepts, n_questions, &edges)
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn concepts_of(&self, q: QuestionId) -> &[ConceptId] {
        &self.question_concepts[q.0]
    }

    pub fn questions_of(&self, c: ConceptId) -> &[QuestionId] {
        &self.concept_questions[c.0]
    }

    pub fn is_one_to_one(&self) -> bool {
        self.n_concepts == self.n_questions
            && self.question_concepts.iter().all(|cs| cs.len() == 1)
            && self.concept_questions.iter().all(|qs| qs.len() == 1)
    }

    /// Edge set in `(question, concept)` order.
    pub fn edges(&self) -> Vec<(QuestionId, ConceptId)> {
        self.question_concepts
            .iter()
            .enumerate()
            .flat_map(|(q, cs)| cs.iter().map(move |&c| (QuestionId(q), c)))
            .collect()
    }

    /// Candidate questions for the chosen concepts: the sorted union of their questions.
    pub fn questions_for_concepts(&self, concepts: &[ConceptId]) -> Result<Vec<QuestionId>> {
        let mut out = BTreeSet::new();
        for &c in concepts {
            if c.0 >= self.n_concepts {
                return Err(Error::OutOfRangeId {
                    kind: "concept",
                    id: c.0,
                    size: self.n_concepts,
                });
            }
            out.extend(self.concept_questions[c.0].iter().copied());
        }
        if out.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        Ok(out.into_iter().collect())
    }

    pub fn max_questions_per_concept(&self) -> usize {
        self.concept_questions.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn validate(&self, k: usize) -> CurriculumReport {
        let counts: Vec<usize> = self.concept_questions.iter().map(Vec::len).collect();
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let k = k.clamp(1, self.n_concepts.max(1));
        let candidate_bound: usize = sorted.iter().take(k).sum();
        let max_candidates = if n_choose_k(self.n_concepts, k) <= EXACT_SUBSET_LIMIT {
            Some(self.max_union_over_subsets(k))
        } else {
            None
        };
        CurriculumReport {
            n_concepts: self.n_concepts,
            n_questions: self.n_questions,
            per_concept_counts: counts,
            k,
            max_candidates,
            candidate_bound,
            concepts_fewer_than_questions: self.n_concepts < self.n_questions,
        }
    }

    fn max_union_over_subsets(&self, k: usize) -> usize {
        let mut best = 0;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let chosen: Vec<ConceptId> = idx.iter().map(|&i| ConceptId(i)).collect();
            let size = self.questions_for_concepts(&chosen).map(|v| v.len()).unwrap_or(0);
            best = best.max(size);
            // advance to the next k-combination in lexicographic order
            let Some(i) = (0..k).rev().find(|&i| idx[i] != i + self.n_concepts - k) else {
                return best;
            };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

const EXACT_SUBSET_LIMIT: u128 = 200_000;

fn n_choose_k(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub n_concepts: usize,
    pub n_questions: usize,
    pub per_concept_counts: Vec<usize>,
    pub k: usize,
    /// Exact maximum candidate-set size over k-subsets, when enumeration is affordable.
    pub max_candidates: Option<usize>,
    /// Sum of the k largest per-concept counts; an upper bound on any candidate set.
    pub candidate_bound: usize,
    pub concepts_fewer_than_questions: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> CurriculumMap {
        let edges = [(0, 0), (1, 0), (1, 1), (2, 1)].map(|(q, c)| (QuestionId(q), ConceptId(c)));
        CurriculumMap::build(2, 3, &edges).unwrap()
    }

    #[test]
    fn transposes_edges() {
        let map = small();
        assert_eq!(map.questions_of(ConceptId(0)), &[QuestionId(0), QuestionId(1)]);
        assert_eq!(map.questions_of(ConceptId(1)), &[QuestionId(1), QuestionId(2)]);
        assert_eq!(map.concepts_of(QuestionId(1)), &[ConceptId(0), ConceptId(1)]);
    }

    #[test]
    fn one_to_one_regime() {
        let map = CurriculumMap::build(1, 1, &[(QuestionId(0), ConceptId(0))]).unwrap();
        assert!(map.is_one_to_one());
        let report = CurriculumMap::one_to_one(10).unwrap().validate(1);
        assert!(report.per_concept_counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn accepts_large_cardinalities() {
        let (m, n) = (121, 15003);
        let edges: Vec<_> = (0..n).map(|q| (QuestionId(q), ConceptId(q % m))).collect();
        let map = CurriculumMap::build(m, n, &edges).unwrap();
        let report = map.validate(1);
        assert!(report.concepts_fewer_than_questions);
        assert_eq!(report.max_candidates, Some(map.max_questions_per_concept()));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            CurriculumMap::build(1, 2, &[(QuestionId(0), ConceptId(0))]),
            Err(Error::OrphanQuestion(1))
        ));
        assert!(matches!(
            CurriculumMap::build(1, 1, &[(QuestionId(0), ConceptId(3))]),
            Err(Error::OutOfRangeId { kind: "concept", .. })
        ));
        assert!(matches!(CurriculumMap::build(1, 1, &[]), Err(Error::EmptyEdgeList)));
    }

    #[test]
    fn candidate_filtering() {
        let map = small();
        assert_eq!(
            map.questions_for_concepts(&[ConceptId(0)]).unwrap(),
            vec![QuestionId(0), QuestionId(1)]
        );
        assert_eq!(
            map.questions_for_concepts(&[ConceptId(0), ConceptId(1)]).unwrap(),
            vec![QuestionId(0), QuestionId(1), QuestionId(2)]
        );
        assert!(matches!(map.questions_for_concepts(&[]), Err(Error::EmptyCandidateSet)));
    }

    #[test]
    fn report_counts() {
        let report = small().validate(1);
        assert_eq!(report.per_concept_counts, vec![2, 2]);
        assert_eq!(report.max_candidates, Some(2));
        assert_eq!(small().validate(2).max_candidates, Some(3));
    }

    #[test]
    fn subset_enumeration_matches_brute_force() {
        let edges: Vec<_> = [(0, 0), (1, 0), (2, 1), (3, 2), (4, 2), (5, 2), (1, 3), (5, 3)]
            .iter()
            .map(|&(q, c)| (QuestionId(q), ConceptId(c)))
            .collect();
        let map = CurriculumMap::build(4, 6, &edges).unwrap();
        for k in 1..=4 {
            let mut best = 0;
            for mask in 0u32..16 {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let cs: Vec<_> = (0..4).filter(|i| mask >> i & 1 == 1).map(ConceptId).collect();
                best = best.max(map.questions_for_concepts(&cs).unwrap().len());
            }
            assert_eq!(map.validate(k).max_candidates, Some(best), "k={k}");
        }
    }

    fn arb_map() -> impl Strategy<Value = CurriculumMap> {
        (1usize..6, 1usize..12).prop_flat_map(|(m, n)| {
            proptest::collection::vec(proptest::collection::btree_set(0..m, 1..=m), n).prop_map(move |rows| {
                let edges: Vec<_> = rows
                    .iter()
                    .enumerate()
                    .flat_map(|(q, cs)| cs.iter().map(move |&c| (QuestionId(q), ConceptId(c))))
                    .collect();
                CurriculumMap::build(m, n, &edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn edge_round_trip(map in arb_map()) {
            let rebuilt = CurriculumMap::build(map.n_concepts(), map.n_questions(), &map.edges()).unwrap();
            prop_assert_eq!(rebuilt.edges(), map.edges());
        }

        #[test]
        fn filtering_distributes_over_union(map in arb_map(), a in proptest::collection::vec(0usize..6, 0..4), b in proptest::collection::vec(0usize..6, 0..4)) {
            let m = map.n_concepts();
            let s1: Vec<_> = a.iter().map(|&c| ConceptId(c % m)).collect();
            let s2: Vec<_> = b.iter().map(|&c| ConceptId(c % m)).collect();
            let both: Vec<_> = s1.iter().chain(&s2).copied().collect();
            let get = |s: &[ConceptId]| map.questions_for_concepts(s).map(|v| v.into_iter().collect::<BTreeSet<_>>()).unwrap_or_default();
            let union: BTreeSet<_> = get(&s1).union(&get(&s2)).copied().collect();
            prop_assert_eq!(get(&both), union);
        }

        #[test]
        fn every_related_question_is_a_candidate(map in arb_map()) {
            for (q, c) in map.edges() {
                prop_assert!(map.questions_for_concepts(&[c]).unwrap().contains(&q));
            }
        }
    }
}
