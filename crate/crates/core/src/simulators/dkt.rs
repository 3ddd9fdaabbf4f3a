//! DKT-style knowledge tracing: an LSTM over `(question, correctness)` inputs
//! with a per-question sigmoid output head.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curriculum::{LearningHistory, QuestionId};
use crate::error::{Error, Result};
use crate::nn::{l2_norm, sigmoid, Adam, Linear, Lstm, LstmStep, ParamSet};
use crate::rng;

pub const KT_SCHEMA_VERSION: &str = "hierrec.kt-model/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtTrainConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub clip_norm: f64,
    /// Derived from the experiment seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for KtTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            embed_dim: 32,
            epochs: 6,
            learning_rate: 5e-3,
            batch_size: 32,
            holdout_fraction: 0.2,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtTrainReport {
    pub train_sessions: usize,
    pub holdout_sessions: usize,
    pub epoch_losses: Vec<f64>,
    /// `None` when the held-out labels contain a single class.
    pub holdout_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtModel {
    schema_version: String,
    n_questions: usize,
    params: ParamSet,
    embed: Linear,
    lstm: Lstm,
    out: Linear,
}

pub type KtState = (Vec<f64>, Vec<f64>);

impl KtModel {
    pub fn new(n_questions: usize, config: &KtTrainConfig) -> Self {
        let mut r = rng::stream(config.seed, "kt-init", 0);
        let mut params = ParamSet::new();
        let embed = Linear::new(&mut params, "kt.embed", 2 * n_questions, config.embed_dim, true, &mut r);
        let lstm = Lstm::new(&mut params, "kt.lstm", config.embed_dim, config.hidden_dim, &mut r);
        let out = Linear::new(&mut params, "kt.out", config.hidden_dim, n_questions, true, &mut r);
        Self {
            schema_version: KT_SCHEMA_VERSION.to_string(),
            n_questions,
            params,
            embed,
            lstm,
            out,
        }
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn initial_state(&self) -> KtState {
        self.lstm.zero_state()
    }

    fn input_index(&self, q: QuestionId, correct: bool) -> usize {
        q.0 + if correct { self.n_questions } else { 0 }
    }

    fn step(&self, state: &KtState, q: QuestionId, correct: bool) -> (Vec<f64>, LstmStep) {
        let p = self.params.values();
        let x = self.embed.forward_sparse(p, &[(self.input_index(q, correct), 1.0)]);
        let step = self.lstm.step(p, &x, &state.0, &state.1);
        (x, step)
    }

    pub fn advance(&self, state: &KtState, q: QuestionId, correct: bool) -> KtState {
        let (_, step) = self.step(state, q, correct);
        (step.h, step.c)
    }

    pub fn prob(&self, state: &KtState, q: QuestionId) -> f64 {
        sigmoid(self.out.forward_unit(self.params.values(), &state.0, q.0))
    }

    pub fn probs(&self, state: &KtState) -> Vec<f64> {
        self.out
            .forward(self.params.values(), &state.0)
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    pub fn state_after(&self, history: &LearningHistory) -> KtState {
        history
            .records
            .iter()
            .fold(self.initial_state(), |s, r| self.advance(&s, r.question, r.correct))
    }

    /// Probability of a correct answer to `q` after `history`.
    pub fn predict(&self, history: &LearningHistory, q: QuestionId) -> f64 {
        self.prob(&self.state_after(history), q)
    }

    /// Summed next-answer cross-entropy of one sequence, accumulating gradients.
    fn sequence_grad(&self, history: &LearningHistory, grads: &mut [f64]) -> f64 {
        let p = self.params.values();
        let records = &history.records;
        let mut state = self.initial_state();
        let mut steps = Vec::with_capacity(records.len());
        let mut hs = vec![state.0.clone()];
        // h_j (j = 0..len-1) predicts record j
        for r in &records[..records.len().saturating_sub(1)] {
            let (_, step) = self.step(&state, r.question, r.correct);
            state = (step.h.clone(), step.c.clone());
            hs.push(step.h.clone());
            steps.push(step);
        }
        let mut loss = 0.0;
        let mut dh_ext = vec![vec![0.0; self.lstm.hidden_dim]; hs.len()];
        for (j, r) in records.iter().enumerate() {
            let logit = self.out.forward_unit(p, &hs[j], r.question.0);
            let yhat = sigmoid(logit).clamp(1e-7, 1.0 - 1e-7);
            let y = if r.correct { 1.0 } else { 0.0 };
            loss -= y * yhat.ln() + (1.0 - y) * (1.0 - yhat).ln();
            let dh = self.out.backward_unit(p, &hs[j], r.question.0, sigmoid(logit) - y, grads);
            dh_ext[j] = dh;
        }
        let mut dh = vec![0.0; self.lstm.hidden_dim];
        let mut dc = vec![0.0; self.lstm.hidden_dim];
        for j in (0..steps.len()).rev() {
            for (a, b) in dh.iter_mut().zip(&dh_ext[j + 1]) {
                *a += b;
            }
            let r = &records[j];
            let (dx, dh_prev, dc_prev) = self.lstm.backward_step(p, &steps[j], &dh, &dc, grads);
            self.embed
                .backward_sparse(&[(self.input_index(r.question, r.correct), 1.0)], &dx, grads);
            dh = dh_prev;
            dc = dc_prev;
        }
        loss
    }

    /// Fits the model to next-answer correctness and reports held-out AUC.
    pub fn train(histories: &[LearningHistory], n_questions: usize, config: &KtTrainConfig) -> Result<(Self, KtTrainReport)> {
        let mut usable: Vec<&LearningHistory> = histories.iter().filter(|h| !h.is_empty()).collect();
        if usable.is_empty() {
            return Err(Error::InsufficientData("no non-empty learning history".into()));
        }
        if let Some(r) = usable.iter().flat_map(|h| &h.records).find(|r| r.question.0 >= n_questions) {
            return Err(Error::OutOfRangeId {
                kind: "question",
                id: r.question.0,
                size: n_questions,
            });
        }
        let mut split_rng = rng::stream(config.seed, "kt-split", 0);
        usable.shuffle(&mut split_rng);
        let n_holdout = if usable.len() >= 2 {
            ((usable.len() as f64 * config.holdout_fraction).round() as usize).min(usable.len() - 1)
        } else {
            0
        };
        let (holdout, train) = usable.split_at(n_holdout);
        let mut model = Self::new(n_questions, config);
        let mut adam = Adam::new(model.params.len(), config.learning_rate);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng::stream(config.seed, "kt-epoch", epoch as u64));
            let mut epoch_loss = 0.0;
            let mut epoch_count = 0usize;
            for batch in order.chunks(config.batch_size.max(1)) {
                let mut grads = model.params.zeros_like();
                let mut count = 0usize;
                for &i in batch {
                    epoch_loss += model.sequence_grad(train[i], &mut grads);
                    count += train[i].len();
                }
                epoch_count += count;
                let scale = 1.0 / count as f64;
                grads.iter_mut().for_each(|g| *g *= scale);
                let norm = l2_norm(&grads);
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grads.iter_mut().for_each(|g| *g *= s);
                }
                adam.update(model.params.values_mut(), &grads, None);
            }
            epoch_losses.push(epoch_loss / epoch_count.max(1) as f64);
        }
        let holdout_auc = model.evaluate_auc(holdout);
        let report = KtTrainReport {
            train_sessions: train.len(),
            holdout_sessions: holdout.len(),
            epoch_losses,
            holdout_auc,
        };
        Ok((model, report))
    }

    /// Next-answer AUC over all positions of the given sequences.
    pub fn evaluate_auc(&self, histories: &[&LearningHistory]) -> Option<f64> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for h in histories {
            let mut state = self.initial_state();
            for r in &h.records {
                scores.push(self.prob(&state, r.question));
                labels.push(r.correct);
                state = self.advance(&state, r.question, r.correct);
            }
        }
        auc(&scores, &labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.schema_version != KT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported KT model schema '{}' (expected '{KT_SCHEMA_VERSION}')",
                model.schema_version
            )));
        }
        Ok(model)
    }
}

/// Area under the ROC curve via the rank-sum statistic, averaging tied ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(records: &[(usize, bool)]) -> LearningHistory {
        let mut h = LearningHistory::new();
        for &(q, y) in records {
            h.push(QuestionId(q), y);
        }
        h
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9];
        let labels = [false, false, true, true, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-12);
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = KtModel::train(&[LearningHistory::new()], 3, &KtTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn prediction_range_and_determinism() {
        let model = KtModel::new(4, &KtTrainConfig::default());
        let p0 = model.predict(&LearningHistory::new(), QuestionId(2));
        assert!((0.0..=1.0).contains(&p0));
        let h = history(&[(0, true), (1, false)]);
        assert_eq!(model.predict(&h, QuestionId(3)), model.predict(&h, QuestionId(3)));
    }

    #[test]
    fn learns_an_all_correct_corpus() {
        let corpus: Vec<_> = (0..60)
            .map(|i| history(&(0..8).map(|t| ((i + t) % 5, true)).collect::<Vec<_>>()))
            .collect();
        let config = KtTrainConfig {
            epochs: 30,
            ..KtTrainConfig::default()
        };
        let (model, report) = KtModel::train(&corpus, 5, &config).unwrap();
        assert_eq!(report.holdout_auc, None);
        for q in 0..5 {
            assert!(model.predict(&corpus[0], QuestionId(q)) > 0.9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = KtTrainConfig {
            hidden_dim: 3,
            embed_dim: 2,
            ..KtTrainConfig::default()
        };
        let mut model = KtModel::new(3, &config);
        let h = history(&[(0, true), (2, false), (1, true), (0, false)]);
        let mut grads = model.params.zeros_like();
        model.sequence_grad(&h, &mut grads);
        let eps = 1e-5;
        for i in 0..model.params.len() {
            let orig = model.params.values()[i];
            model.params.values_mut()[i] = orig + eps;
            let lp = model.sequence_grad(&h, &mut vec![0.0; grads.len()]);
            model.params.values_mut()[i] = orig - eps;
            let lm = model.sequence_grad(&h, &mut vec![0.0; grads.len()]);
            model.params.values_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grads[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {i}: fd {fd} analytic {}", grads[i]);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kt.json");
        let model = KtModel::new(3, &KtTrainConfig::default());
        model.save(&path).unwrap();
        assert_eq!(KtModel::load(&path).unwrap(), model);
    }
}
